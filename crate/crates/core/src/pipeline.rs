//! End-to-end orchestration: trace ingestion or generation, preferred-input
//! analysis, TK selection, clustering, coverage and baselines, with every
//! intermediate artifact persisted to the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::{abstract_knowledge, DistributionMap};
use crate::baselines::{all_baselines, BaselineConfig, TrainBounds};
use crate::cluster::{fit_clusters, tkc, ClusterConfig, ClusterModel, CoverageReport};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::selection::{assess_neurons, select_from_assessments, DiversityType, SelectionConfig, TkNeuronSet};
use crate::trace::{generate_traces, read_trace_file, Dataset, TraceSet};

pub const TK_FILE: &str = "tk_neurons.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DIST_ID_FILE: &str = "distributions_id.json";
pub const DIST_OOD_FILE: &str = "distributions_ood.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    IdTrain,
    IdTest,
    Ood,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::IdTrain, Role::IdTest, Role::Ood];

    pub fn key(self) -> &'static str {
        match self {
            Role::IdTrain => "id_train",
            Role::IdTest => "id_test",
            Role::Ood => "ood",
        }
    }
}

/// Where a role's traces come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputSource {
    /// Dataset manifest, traced through the configured model.
    Dataset(PathBuf),
    /// Pre-generated `DKTR` file.
    Traces(PathBuf),
}

/// Settings as they appear in a JSON config file or on the command line.
/// Every field is optional so flags can be layered over a file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub model: Option<PathBuf>,
    pub id_train: Option<PathBuf>,
    pub id_test: Option<PathBuf>,
    pub ood: Option<PathBuf>,
    pub traces_id_train: Option<PathBuf>,
    pub traces_id_test: Option<PathBuf>,
    pub traces_ood: Option<PathBuf>,
    pub hd_low: Option<f64>,
    pub hd_high: Option<f64>,
    pub diversity: Option<Vec<DiversityType>>,
    pub top_percent: Option<f64>,
    pub k_max: Option<usize>,
    pub seed: Option<u64>,
    pub baselines: Option<bool>,
    pub out: Option<PathBuf>,
    pub dump_distributions: Option<bool>,
    pub threads: Option<usize>,
}

impl RunSettings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `self` with every field set in `flags` replaced.
    pub fn overlay(self, flags: RunSettings) -> RunSettings {
        RunSettings {
            model: flags.model.or(self.model),
            id_train: flags.id_train.or(self.id_train),
            id_test: flags.id_test.or(self.id_test),
            ood: flags.ood.or(self.ood),
            traces_id_train: flags.traces_id_train.or(self.traces_id_train),
            traces_id_test: flags.traces_id_test.or(self.traces_id_test),
            traces_ood: flags.traces_ood.or(self.traces_ood),
            hd_low: flags.hd_low.or(self.hd_low),
            hd_high: flags.hd_high.or(self.hd_high),
            diversity: flags.diversity.or(self.diversity),
            top_percent: flags.top_percent.or(self.top_percent),
            k_max: flags.k_max.or(self.k_max),
            seed: flags.seed.or(self.seed),
            baselines: flags.baselines.or(self.baselines),
            out: flags.out.or(self.out),
            dump_distributions: flags.dump_distributions.or(self.dump_distributions),
            threads: flags.threads.or(self.threads),
        }
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let pick = |role: Role, dataset: Option<PathBuf>, traces: Option<PathBuf>| match (dataset, traces) {
            (Some(d), None) => Ok(InputSource::Dataset(d)),
            (None, Some(t)) => Ok(InputSource::Traces(t)),
            (Some(_), Some(_)) => Err(Error::Config(format!(
                "{}: give either a dataset or a trace file, not both",
                role.key()
            ))),
            (None, None) => Err(Error::Config(format!("{}: no dataset or trace file given", role.key()))),
        };
        let id_train = pick(Role::IdTrain, self.id_train, self.traces_id_train)?;
        let id_test = pick(Role::IdTest, self.id_test, self.traces_id_test)?;
        let ood = pick(Role::Ood, self.ood, self.traces_ood)?;
        let needs_model = [&id_train, &id_test, &ood]
            .iter()
            .any(|s| matches!(s, InputSource::Dataset(_)));
        if needs_model && self.model.is_none() {
            return Err(Error::Config("datasets given without --model".into()));
        }
        for (role, source) in [(Role::IdTrain, &id_train), (Role::IdTest, &id_test), (Role::Ood, &ood)] {
            let (InputSource::Dataset(path) | InputSource::Traces(path)) = source;
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "{}: {} does not exist",
                    role.key(),
                    path.display()
                )));
            }
        }
        if let Some(model) = self.model.as_ref().filter(|_| needs_model) {
            if !model.is_file() {
                return Err(Error::Config(format!("model {} does not exist", model.display())));
            }
        }

        let mut selection = SelectionConfig::with_top_percent(
            self.top_percent
                .ok_or_else(|| Error::Config("top percent is required".into()))?,
        );
        if let Some(v) = self.hd_low {
            selection.hd_low = v;
        }
        if let Some(v) = self.hd_high {
            selection.hd_high = v;
        }
        if let Some(types) = self.diversity {
            selection.diversity = types.into_iter().collect::<BTreeSet<_>>();
        }
        selection.validate()?;

        let seed = self.seed.ok_or_else(|| Error::Config("seed is required".into()))?;
        let clusters = ClusterConfig::new(self.k_max.unwrap_or(5), seed);
        clusters.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }

        Ok(RunConfig {
            model: if needs_model { self.model } else { None },
            id_train,
            id_test,
            ood,
            selection,
            clusters,
            baselines: self.baselines.unwrap_or(false).then(BaselineConfig::default),
            out: self
                .out
                .ok_or_else(|| Error::Config("output directory is required".into()))?,
            dump_distributions: self.dump_distributions.unwrap_or(false),
            threads: self.threads,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub id_train: InputSource,
    pub id_test: InputSource,
    pub ood: InputSource,
    pub selection: SelectionConfig,
    pub clusters: ClusterConfig,
    pub baselines: Option<BaselineConfig>,
    pub out: PathBuf,
    pub dump_distributions: bool,
    /// Worker threads; never affects results.
    pub threads: Option<usize>,
}

impl RunConfig {
    fn source(&self, role: Role) -> &InputSource {
        match role {
            Role::IdTrain => &self.id_train,
            Role::IdTest => &self.id_test,
            Role::Ood => &self.ood,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    /// SHA-256 over the analysis settings and the input trace digests.
    pub config_hash: String,
    /// Role → dataset name.
    pub datasets: BTreeMap<String, String>,
    /// Role → SHA-256 of the traces in `DKTR` encoding.
    pub input_digests: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct HashedSettings<'a> {
    selection: &'a SelectionConfig,
    clusters: &'a ClusterConfig,
    baselines: &'a Option<BaselineConfig>,
    inputs: &'a BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub struct LoadedInput {
    pub name: String,
    pub traces: TraceSet,
}

/// Loads a trace file, or traces a dataset through `model`.
pub fn load_input(source: &InputSource, model: Option<&Model>) -> Result<LoadedInput> {
    match source {
        InputSource::Traces(path) => Ok(LoadedInput {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            traces: read_trace_file(path)?,
        }),
        InputSource::Dataset(path) => {
            let model = model.ok_or_else(|| Error::Config("dataset input requires a model".into()))?;
            let dataset = Dataset::load(path)?;
            let traces = generate_traces(model, &dataset)?;
            Ok(LoadedInput {
                name: dataset.manifest.name,
                traces,
            })
        }
    }
}

pub fn load_model_file(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Model::from_bytes(&bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| Error::json(format!("encoding {}", path.display()), e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(format!("parsing {}", path.display()), e))
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub tk: TkNeuronSet,
    pub clusters: ClusterModel,
    pub report: CoverageReport,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutcome> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(format!("creating {}", cfg.out.display()), e))?;
    let model = cfg.model.as_deref().map(load_model_file).transpose()?;

    let mut loaded = BTreeMap::new();
    for role in Role::ALL {
        loaded.insert(role, load_input(cfg.source(role), model.as_ref())?);
    }
    let train = &loaded[&Role::IdTrain].traces;
    for role in [Role::IdTest, Role::Ood] {
        if loaded[&role].traces.neurons() != train.neurons() {
            return Err(Error::NeuronSpaceMismatch(format!(
                "{} traces cover different neurons than id_train",
                role.key()
            )));
        }
    }

    let dist_id = abstract_knowledge(train)?;
    let dist_ood = abstract_knowledge(&loaded[&Role::Ood].traces)?;
    if cfg.dump_distributions {
        write_distributions(&cfg.out.join(DIST_ID_FILE), &dist_id)?;
        write_distributions(&cfg.out.join(DIST_OOD_FILE), &dist_ood)?;
    }

    let assessments = assess_neurons(&dist_id, &dist_ood)?;
    let tk = select_from_assessments(&assessments, &cfg.selection)?;
    write_json(&cfg.out.join(TK_FILE), &tk)?;
    if tk.is_empty() {
        return Err(Error::NoCandidates);
    }

    let clusters = fit_clusters(train, &tk, &cfg.clusters)?;
    clusters.validate()?;
    write_json(&cfg.out.join(CLUSTERS_FILE), &clusters)?;

    let test = &loaded[&Role::IdTest].traces;
    let mut report = tkc(test, &clusters)?;
    if let Some(bcfg) = &cfg.baselines {
        let bounds = TrainBounds::from_traces(train)?;
        report.baselines = Some(all_baselines(test, &bounds, bcfg)?);
    }
    check_report(&report)?;

    let input_digests: BTreeMap<String, String> = loaded
        .iter()
        .map(|(role, input)| (role.key().to_string(), sha256_hex(&input.traces.to_bytes())))
        .collect();
    let hashed = HashedSettings {
        selection: &cfg.selection,
        clusters: &cfg.clusters,
        baselines: &cfg.baselines,
        inputs: &input_digests,
    };
    let hashed = serde_json::to_vec(&hashed).map_err(|e| Error::json("encoding settings", e))?;
    report.provenance = Some(Provenance {
        tool_version: crate::VERSION.to_string(),
        config_hash: sha256_hex(&hashed),
        datasets: loaded
            .iter()
            .map(|(role, input)| (role.key().to_string(), input.name.clone()))
            .collect(),
        input_digests,
    });

    write_json(&cfg.out.join(REPORT_FILE), &report)?;
    fs::write(cfg.out.join(SUMMARY_FILE), summary_csv(&report)).map_err(|e| Error::io("writing summary", e))?;
    Ok(RunOutcome { tk, clusters, report })
}

fn check_report(report: &CoverageReport) -> Result<()> {
    if !(0.0..=1.0).contains(&report.tkc) || num_bigint::BigUint::from(report.covered) > report.tcc_size {
        return Err(Error::Invariant(format!(
            "coverage {} / {} out of range",
            report.covered, report.tcc_size
        )));
    }
    Ok(())
}

pub fn write_distributions(path: &Path, dists: &DistributionMap) -> Result<()> {
    let list: Vec<_> = dists.values().collect();
    write_json(path, &list)
}

/// One-line-per-criterion CSV.
pub fn summary_csv(report: &CoverageReport) -> String {
    let mut s = String::from("criterion,covered,total,score\n");
    let _ = writeln!(s, "tkc,{},{},{}", report.covered, report.tcc_size, report.tkc);
    if let Some(b) = &report.baselines {
        for (name, v) in [
            ("nc", b.nc),
            ("kmnc", b.kmnc),
            ("nbc", b.nbc),
            ("snac", b.snac),
            ("tknc", b.tknc),
        ] {
            let _ = writeln!(s, "{name},,,{v}");
        }
    }
    s
}

/// Human-readable report table.
pub fn render_report(report: &CoverageReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>14}", "criterion", "score");
    let _ = writeln!(
        s,
        "{:<10} {:>14.6}   ({} of {} combinations, {} TK neurons, {} inputs)",
        "TKC", report.tkc, report.covered, report.tcc_size, report.tk_neurons, report.test_inputs
    );
    if let Some(b) = &report.baselines {
        for (name, v) in [
            ("NC", b.nc),
            ("KMNC", b.kmnc),
            ("NBC", b.nbc),
            ("SNAC", b.snac),
            ("TKNC", b.tknc),
        ] {
            let _ = writeln!(s, "{name:<10} {v:>14.6}");
        }
    }
    s
}

/// One point of a hyperparameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hd_low: f64,
    pub hd_high: f64,
    pub diversity: BTreeSet<DiversityType>,
    pub top_percent: f64,
    pub candidates: usize,
    pub tk_neurons: usize,
    pub covered: u64,
    pub tcc_size: String,
    pub tkc: f64,
}

/// Runs selection, clustering and coverage for every combination of HD window,
/// diversity filter and top percentage. Distributions are computed once.
pub fn sweep(
    train: &TraceSet,
    ood: &TraceSet,
    test: &TraceSet,
    windows: &[(f64, f64)],
    filters: &[BTreeSet<DiversityType>],
    percents: &[f64],
    clusters: &ClusterConfig,
) -> Result<Vec<SweepRow>> {
    let assessments = assess_neurons(&abstract_knowledge(train)?, &abstract_knowledge(ood)?)?;
    let mut rows = Vec::new();
    for &(hd_low, hd_high) in windows {
        for filter in filters {
            for &top_percent in percents {
                let cfg = SelectionConfig {
                    hd_low,
                    hd_high,
                    diversity: filter.clone(),
                    top_percent,
                    metric: Default::default(),
                };
                let tk = select_from_assessments(&assessments, &cfg)?;
                let (covered, tcc_size, score) = if tk.is_empty() {
                    (0, "0".to_string(), 0.0)
                } else {
                    let cm = fit_clusters(train, &tk, clusters)?;
                    let r = tkc(test, &cm)?;
                    (r.covered, r.tcc_size.to_string(), r.tkc)
                };
                rows.push(SweepRow {
                    hd_low,
                    hd_high,
                    diversity: filter.clone(),
                    top_percent,
                    candidates: tk.candidates,
                    tk_neurons: tk.len(),
                    covered,
                    tcc_size,
                    tkc: score,
                });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("hd_low,hd_high,diversity,top_percent,candidates,tk_neurons,covered,tcc_size,tkc\n");
    for r in rows {
        let types: Vec<String> = r.diversity.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.hd_low,
            r.hd_high,
            types.join("+"),
            r.top_percent,
            r.candidates,
            r.tk_neurons,
            r.covered,
            r.tcc_size,
            r.tkc
        );
    }
    s
}
