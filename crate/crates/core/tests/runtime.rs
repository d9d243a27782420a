mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tkcov::model::{ActivationTap, LayerSpec, Model, Padding, Shape};
use tkcov::trace::{generate_traces, Dataset, DatasetRole};

struct ConvNet {
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    same: bool,
    pool: bool,
    classes: usize,
}

fn out_dim(n: usize, k: usize, stride: usize, same: bool) -> usize {
    if same {
        n.div_ceil(stride)
    } else {
        (n - k) / stride + 1
    }
}

impl ConvNet {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let h = rng.gen_range(3..=16);
        let w = rng.gen_range(3..=16);
        let kh = rng.gen_range(1..=h.min(5));
        let kw = rng.gen_range(1..=w.min(5));
        let stride = rng.gen_range(1..=3);
        let same = rng.gen_bool(0.5);
        let (oh, ow) = (out_dim(h, kh, stride, same), out_dim(w, kw, stride, same));
        ConvNet {
            in_ch: rng.gen_range(1..=3),
            h,
            w,
            out_ch: rng.gen_range(1..=4),
            kh,
            kw,
            stride,
            same,
            pool: oh >= 2 && ow >= 2 && rng.gen_bool(0.5),
            classes: rng.gen_range(1..=6),
        }
    }

    fn conv_out(&self) -> (usize, usize) {
        (
            out_dim(self.h, self.kh, self.stride, self.same),
            out_dim(self.w, self.kw, self.stride, self.same),
        )
    }

    fn flat(&self) -> usize {
        let (oh, ow) = self.conv_out();
        if self.pool {
            self.out_ch * (oh / 2) * (ow / 2)
        } else {
            self.out_ch * oh * ow
        }
    }

    fn param_split(&self) -> [usize; 4] {
        let cw = self.out_ch * self.in_ch * self.kh * self.kw;
        [cw, self.out_ch, self.classes * self.flat(), self.classes]
    }

    fn model(&self, weights: Vec<f32>) -> Model {
        let mut layers = vec![
            LayerSpec::Conv2d {
                in_channels: self.in_ch,
                out_channels: self.out_ch,
                kernel_h: self.kh,
                kernel_w: self.kw,
                stride: self.stride,
                padding: if self.same { Padding::Same } else { Padding::Valid },
            },
            LayerSpec::Relu,
        ];
        if self.pool {
            layers.push(LayerSpec::Maxpool { kernel: 2, stride: 2 });
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: self.flat(),
                outputs: self.classes,
            },
            LayerSpec::Softmax,
        ]);
        let shape = Shape::Image {
            channels: self.in_ch,
            height: self.h,
            width: self.w,
        };
        Model::new("reference", shape, layers, weights).unwrap()
    }

    /// Straightforward nested-loop evaluation in f64.
    fn reference(&self, weights: &[f32], x: &[f32]) -> Vec<f64> {
        let [cw, cb, dw, _] = self.param_split();
        let (conv_w, rest) = weights.split_at(cw);
        let (conv_b, rest) = rest.split_at(cb);
        let (dense_w, dense_b) = rest.split_at(dw);
        let (oh, ow) = self.conv_out();
        let (pad_top, pad_left) = if self.same {
            (
                (((oh - 1) * self.stride + self.kh).saturating_sub(self.h)) / 2,
                (((ow - 1) * self.stride + self.kw).saturating_sub(self.w)) / 2,
            )
        } else {
            (0, 0)
        };
        let pixel = |c: usize, y: isize, x_: isize| -> f64 {
            if y < 0 || x_ < 0 || y >= self.h as isize || x_ >= self.w as isize {
                0.0
            } else {
                x[(c * self.h + y as usize) * self.w + x_ as usize] as f64
            }
        };
        let mut fmap = vec![vec![vec![0f64; ow]; oh]; self.out_ch];
        for (oc, plane) in fmap.iter_mut().enumerate() {
            for (oy, line) in plane.iter_mut().enumerate() {
                for (ox, cell) in line.iter_mut().enumerate() {
                    let mut acc = conv_b[oc] as f64;
                    for ic in 0..self.in_ch {
                        for ky in 0..self.kh {
                            for kx in 0..self.kw {
                                let wv = conv_w[((oc * self.in_ch + ic) * self.kh + ky) * self.kw + kx] as f64;
                                let y = (oy * self.stride + ky) as isize - pad_top as isize;
                                let xx = (ox * self.stride + kx) as isize - pad_left as isize;
                                acc += wv * pixel(ic, y, xx);
                            }
                        }
                    }
                    *cell = acc.max(0.0);
                }
            }
        }
        let mut neurons: Vec<f64> = fmap
            .iter()
            .map(|plane| plane.iter().flatten().sum::<f64>() / (oh * ow) as f64)
            .collect();
        let mut flat = Vec::new();
        for plane in &fmap {
            if self.pool {
                for py in 0..oh / 2 {
                    for px in 0..ow / 2 {
                        let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                            .iter()
                            .map(|(dy, dx)| plane[2 * py + dy][2 * px + dx])
                            .fold(f64::NEG_INFINITY, f64::max);
                        flat.push(m);
                    }
                }
            } else {
                flat.extend(plane.iter().flatten());
            }
        }
        let logits: Vec<f64> = (0..self.classes)
            .map(|o| {
                dense_b[o] as f64
                    + (0..flat.len())
                        .map(|i| dense_w[o * flat.len() + i] as f64 * flat[i])
                        .sum::<f64>()
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
        let total: f64 = exp.iter().sum();
        neurons.extend(exp.iter().map(|e| e / total));
        neurons
    }
}

#[test]
fn conv_channel_mean_matches_reference_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..150 {
        let net = ConvNet::random(&mut rng);
        let count: usize = net.param_split().iter().sum();
        let weights: Vec<f32> = (0..count).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let model = net.model(weights.clone());
        assert_eq!(model.neuron_count(), net.out_ch + net.classes);
        for _ in 0..3 {
            let x: Vec<f32> = (0..net.in_ch * net.h * net.w)
                .map(|_| rng.gen_range(0.0..1.0))
                .collect();
            let got = model.forward(&x).unwrap().neurons;
            let want = net.reference(&weights, &x);
            for (j, (g, w)) in got.iter().zip(&want).enumerate() {
                assert!(
                    (*g as f64 - w).abs() <= 1e-5 * w.abs().max(1.0),
                    "case {case} neuron {j}: {g} vs {w}"
                );
            }
        }
    }
}

#[test]
fn probe_fixture_matches_reference_convolution() {
    let model = common::load_model("conv.dknn");
    let probe = common::load_dataset("probe");
    let traces = generate_traces(&model, &probe).unwrap();
    assert_eq!(traces.width(), 14);
    let net = ConvNet {
        in_ch: 1,
        h: 8,
        w: 8,
        out_ch: 4,
        kh: 3,
        kw: 3,
        stride: 1,
        same: false,
        pool: true,
        classes: 10,
    };
    for k in 0..probe.len() {
        let want = net.reference(model.weights(), probe.input(k));
        for (g, w) in traces.row(k).iter().zip(&want) {
            assert!((*g as f64 - w).abs() <= 1e-5, "{g} vs {w}");
        }
    }
}

fn bias_free_mlp(dims: &[usize], weights: Vec<f32>) -> Model {
    let mut layers = Vec::new();
    for pair in dims.windows(2) {
        layers.push(LayerSpec::Dense {
            inputs: pair[0],
            outputs: pair[1],
        });
        layers.push(LayerSpec::Relu);
    }
    layers.pop();
    Model::new("linear", Shape::Flat(dims[0]), layers, weights).unwrap()
}

proptest! {
    #[test]
    fn dense_probe_is_positively_homogeneous(
        seed in any::<u64>(),
        alpha in 0.01f32..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = (0..rng.gen_range(2..=4)).map(|_| rng.gen_range(1..=12)).collect();
        // weights, with every bias left at zero
        let mut weights = Vec::new();
        for pair in dims.windows(2) {
            weights.extend((0..pair[0] * pair[1]).map(|_| rng.gen_range(-1.0f32..1.0)));
            weights.extend(std::iter::repeat_n(0.0, pair[1]));
        }
        let model = bias_free_mlp(&dims, weights);
        let x: Vec<f32> = (0..dims[0]).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let scaled: Vec<f32> = x.iter().map(|v| v * alpha).collect();
        let base = model.forward_with(&x, ActivationTap::PreNonlinearity).unwrap().neurons;
        let probe = model.forward_with(&scaled, ActivationTap::PreNonlinearity).unwrap().neurons;
        let scale = base.iter().fold(0f32, |m, v| m.max(v.abs())) * alpha;
        for (b, p) in base.iter().zip(&probe) {
            let want = b * alpha;
            prop_assert!((p - want).abs() <= 1e-5 * want.abs().max(scale * 1e-2), "{} vs {}", p, want);
        }
    }

    #[test]
    fn softmax_outputs_are_a_distribution(
        seed in any::<u64>(),
        magnitude in prop_oneof![Just(1.0f32), Just(100.0), Just(1e4)],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_in, n_out) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let layers = vec![LayerSpec::Dense { inputs: n_in, outputs: n_out }, LayerSpec::Softmax];
        let weights = (0..n_in * n_out + n_out).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let model = Model::new("softmax", Shape::Flat(n_in), layers, weights).unwrap();
        let x: Vec<f32> = (0..n_in).map(|_| rng.gen_range(-1.0f32..1.0) * magnitude).collect();
        let out = model.forward(&x).unwrap();
        prop_assert!(out.output.iter().all(|&p| p >= 0.0));
        let total: f64 = out.output.iter().map(|&p| p as f64).sum();
        prop_assert!((total - 1.0).abs() <= 1e-5, "sum {}", total);
        prop_assert_eq!(&out.neurons, &out.output);
    }
}

#[test]
fn traces_identical_across_thread_counts() {
    let model = common::load_model("mlp.dknn");
    let data = common::load_dataset("id_test");
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate_traces(&model, &data).unwrap().to_bytes())
    };
    let single = run(1);
    assert_eq!(single, run(4));
    assert_eq!(single, run(7));
}

#[test]
fn repeated_forward_is_bit_identical() {
    let model = common::load_model("conv.dknn");
    let probe = common::load_dataset("probe");
    for k in 0..probe.len() {
        let a = model.forward(probe.input(k)).unwrap();
        let b = model.forward(probe.input(k)).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.neurons), bits(&b.neurons));
        assert_eq!(bits(&a.output), bits(&b.output));
    }
}

#[test]
fn nonfinite_input_is_rejected() {
    let model = common::load_model("mlp.dknn");
    let mut x = vec![0f32; 10];
    x[3] = f32::NAN;
    assert!(matches!(model.forward(&x), Err(tkcov::Error::NonFiniteInput(3))));
    let data = Dataset::new("bad", DatasetRole::IdTest, Shape::Flat(10), x, None).unwrap();
    assert!(generate_traces(&model, &data).is_err());
}
