use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tkcov::abstraction::abstract_knowledge;
use tkcov::baselines::{all_baselines, BaselineConfig, TrainBounds};
use tkcov::cluster::{fit_clusters, tkc, ClusterConfig, ClusterModel};
use tkcov::pipeline::{
    self, load_model_file, read_json, render_report, run_pipeline, sweep, sweep_csv, write_json, RunSettings,
};
use tkcov::selection::{assess_neurons, select_from_assessments, DiversityType, SelectionConfig, TkNeuronSet};
use tkcov::trace::{generate_traces, read_trace_file, write_trace_file, Dataset};
use tkcov::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tkcov",
    version,
    about = "Transfer-knowledge coverage for neural network test sets"
)]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a DKNN model over a dataset and write a DKTR trace file.
    Trace {
        #[arg(long)]
        model: PathBuf,
        /// Dataset manifest (JSON).
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build preferred-input distributions for ID and OOD traces.
    Analyze {
        #[arg(long)]
        traces_id_train: PathBuf,
        #[arg(long)]
        traces_ood: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Select transfer-knowledge neurons.
    Select {
        #[arg(long)]
        traces_id_train: PathBuf,
        #[arg(long)]
        traces_ood: PathBuf,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long)]
        top_percent: f64,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster TK neuron activations of the training traces.
    Fit {
        #[arg(long)]
        traces_id_train: PathBuf,
        /// TK neuron set written by `select`.
        #[arg(long)]
        tk: PathBuf,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a test trace set against a cluster model.
    Coverage {
        /// Cluster model written by `fit`.
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        traces_id_test: PathBuf,
        /// Training traces; when given, baseline criteria are added.
        #[arg(long)]
        traces_id_train: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline criteria (NC, KMNC, NBC, SNAC, TKNC).
    Baselines {
        #[arg(long)]
        traces_id_train: PathBuf,
        #[arg(long)]
        traces_id_test: PathBuf,
        #[arg(long, default_value_t = tkcov::baselines::NC_THRESHOLD)]
        nc_threshold: f32,
        #[arg(long, default_value_t = tkcov::baselines::KMNC_SECTIONS)]
        kmnc_sections: usize,
        #[arg(long, default_value_t = tkcov::baselines::TKNC_TOP)]
        tknc_top: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// End-to-end pipeline.
    Run(Box<RunArgs>),
    /// Hyperparameter sweep over HD windows, diversity filters and top percentages.
    Sweep {
        #[arg(long)]
        traces_id_train: PathBuf,
        #[arg(long)]
        traces_ood: PathBuf,
        #[arg(long)]
        traces_id_test: PathBuf,
        /// HD window as LOW:HIGH; repeatable.
        #[arg(long = "window", value_parser = parse_window, required = true)]
        windows: Vec<(f64, f64)>,
        /// Diversity filter such as `gained` or `gained+stable`; repeatable.
        #[arg(long = "filter", value_parser = parse_filter, default_value = "gained")]
        filters: Vec<BTreeSet<DiversityType>>,
        #[arg(long = "percent", value_delimiter = ',', default_values_t = [10.0, 20.0, 30.0, 40.0, 50.0])]
        percents: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SelectionArgs {
    #[arg(long, default_value_t = 0.01)]
    hd_low: f64,
    #[arg(long, default_value_t = 0.05)]
    hd_high: f64,
    #[arg(long, num_args = 1.., value_delimiter = ',', default_value = "gained")]
    diversity: Vec<DiversityType>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    id_train: Option<PathBuf>,
    #[arg(long)]
    id_test: Option<PathBuf>,
    #[arg(long)]
    ood: Option<PathBuf>,
    #[arg(long)]
    traces_id_train: Option<PathBuf>,
    #[arg(long)]
    traces_id_test: Option<PathBuf>,
    #[arg(long)]
    traces_ood: Option<PathBuf>,
    #[arg(long)]
    hd_low: Option<f64>,
    #[arg(long)]
    hd_high: Option<f64>,
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    diversity: Option<Vec<DiversityType>>,
    #[arg(long)]
    top_percent: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Add NC, KMNC, NBC, SNAC and TKNC to the report.
    #[arg(long)]
    baselines: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-neuron preference distributions.
    #[arg(long)]
    dump_distributions: bool,
}

impl RunArgs {
    fn settings(self, threads: Option<usize>) -> Result<RunSettings> {
        let file = match &self.config {
            Some(path) => RunSettings::from_file(path)?,
            None => RunSettings::default(),
        };
        let flags = RunSettings {
            model: self.model,
            id_train: self.id_train,
            id_test: self.id_test,
            ood: self.ood,
            traces_id_train: self.traces_id_train,
            traces_id_test: self.traces_id_test,
            traces_ood: self.traces_ood,
            hd_low: self.hd_low,
            hd_high: self.hd_high,
            diversity: self.diversity,
            top_percent: self.top_percent,
            k_max: self.k_max,
            seed: self.seed,
            baselines: self.baselines.then_some(true),
            out: self.out,
            dump_distributions: self.dump_distributions.then_some(true),
            threads,
        };
        Ok(file.overlay(flags))
    }
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("`{s}` is not LOW:HIGH"))?;
    let lo = lo.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn parse_filter(s: &str) -> std::result::Result<BTreeSet<DiversityType>, String> {
    s.split('+')
        .map(|t| t.trim().parse::<DiversityType>().map_err(|e| e.to_string()))
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn execute(command: Command, threads: Option<usize>) -> Result<()> {
    match command {
        Command::Trace { model, dataset, out } => {
            let model = load_model_file(&model)?;
            let dataset = Dataset::load(&dataset)?;
            let traces = generate_traces(&model, &dataset)?;
            write_trace_file(&traces, &out)?;
            println!(
                "wrote {} ({} inputs x {} neurons)",
                out.display(),
                traces.rows(),
                traces.width()
            );
        }
        Command::Analyze {
            traces_id_train,
            traces_ood,
            out,
        } => {
            ensure_dir(&out)?;
            let dist_id = abstract_knowledge(&read_trace_file(&traces_id_train)?)?;
            let dist_ood = abstract_knowledge(&read_trace_file(&traces_ood)?)?;
            pipeline::write_distributions(&out.join(pipeline::DIST_ID_FILE), &dist_id)?;
            pipeline::write_distributions(&out.join(pipeline::DIST_OOD_FILE), &dist_ood)?;
            let assessments = assess_neurons(&dist_id, &dist_ood)?;
            write_json(&out.join("assessments.json"), &assessments)?;
            let active = assessments.iter().filter(|a| a.hd_valid).count();
            println!(
                "{} neurons, {} with preferred inputs in both datasets",
                assessments.len(),
                active
            );
        }
        Command::Select {
            traces_id_train,
            traces_ood,
            selection,
            top_percent,
            out,
        } => {
            let cfg = SelectionConfig {
                hd_low: selection.hd_low,
                hd_high: selection.hd_high,
                diversity: selection.diversity.into_iter().collect(),
                top_percent,
                metric: Default::default(),
            };
            cfg.validate()?;
            let dist_id = abstract_knowledge(&read_trace_file(&traces_id_train)?)?;
            let dist_ood = abstract_knowledge(&read_trace_file(&traces_ood)?)?;
            let tk = select_from_assessments(&assess_neurons(&dist_id, &dist_ood)?, &cfg)?;
            write_json(&out, &tk)?;
            println!("{} of {} candidates selected", tk.len(), tk.candidates);
            if tk.is_empty() {
                return Err(Error::NoCandidates);
            }
        }
        Command::Fit {
            traces_id_train,
            tk,
            k_max,
            seed,
            out,
        } => {
            let tk: TkNeuronSet = read_json(&tk)?;
            if tk.is_empty() {
                return Err(Error::NoCandidates);
            }
            let cm = fit_clusters(
                &read_trace_file(&traces_id_train)?,
                &tk,
                &ClusterConfig::new(k_max, seed),
            )?;
            write_json(&out, &cm)?;
            println!("{} TK neurons, {} combinations", cm.neurons.len(), cm.tcc_size);
        }
        Command::Coverage {
            clusters,
            traces_id_test,
            traces_id_train,
            out,
        } => {
            let cm: ClusterModel = read_json(&clusters)?;
            cm.validate()?;
            let test = read_trace_file(&traces_id_test)?;
            let mut report = tkc(&test, &cm)?;
            if let Some(train) = traces_id_train {
                let bounds = TrainBounds::from_traces(&read_trace_file(&train)?)?;
                report.baselines = Some(all_baselines(&test, &bounds, &BaselineConfig::default())?);
            }
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
            print!("{}", render_report(&report));
        }
        Command::Baselines {
            traces_id_train,
            traces_id_test,
            nc_threshold,
            kmnc_sections,
            tknc_top,
            out,
        } => {
            let bounds = TrainBounds::from_traces(&read_trace_file(&traces_id_train)?)?;
            let cfg = BaselineConfig {
                nc_threshold,
                kmnc_sections,
                tknc_top,
            };
            let scores = all_baselines(&read_trace_file(&traces_id_test)?, &bounds, &cfg)?;
            if let Some(out) = out {
                write_json(&out, &scores)?;
            }
            println!(
                "NC {:.6}  KMNC {:.6}  NBC {:.6}  SNAC {:.6}  TKNC {:.6}",
                scores.nc, scores.kmnc, scores.nbc, scores.snac, scores.tknc
            );
        }
        Command::Run(args) => {
            let cfg = args.settings(threads)?.resolve()?;
            if threads.is_none() {
                if let Some(n) = cfg.threads {
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global()
                        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
                }
            }
            let outcome = run_pipeline(&cfg)?;
            print!("{}", render_report(&outcome.report));
            eprintln!("artifacts written to {}", cfg.out.display());
        }
        Command::Sweep {
            traces_id_train,
            traces_ood,
            traces_id_test,
            windows,
            filters,
            percents,
            k_max,
            seed,
            out,
        } => {
            ensure_dir(&out)?;
            let clusters = ClusterConfig::new(k_max, seed);
            clusters.validate()?;
            let rows = sweep(
                &read_trace_file(&traces_id_train)?,
                &read_trace_file(&traces_ood)?,
                &read_trace_file(&traces_id_test)?,
                &windows,
                &filters,
                &percents,
                &clusters,
            )?;
            write_json(&out.join("sweep.json"), &rows)?;
            let csv = sweep_csv(&rows);
            fs::write(out.join("sweep.csv"), &csv).map_err(|e| Error::io("writing sweep.csv", e))?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(5);
        }
    }
    match execute(cli.command, cli.threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
