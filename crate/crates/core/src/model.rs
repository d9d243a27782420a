//! Feedforward model description, the `DKNN` v1 file format and a small
//! f32 inference runtime that reports one activation per trainable-layer
//! neuron.
//!
//! Layout of a `DKNN` v1 file:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DKNN"
//! 4       4     version (u32 LE, = 1)
//! 8       4     header length H (u32 LE)
//! 12      H     UTF-8 JSON header {name, input_shape, layers}
//! 12+H    ..    weight blob, f32 LE, per layer weights then bias
//! ```
//!
//! Dense weights are stored row-major as `out × in`; convolution kernels as
//! `out_ch × in_ch × kh × kw`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DKNN";
pub const MODEL_VERSION: u32 = 1;

const KNOWN_KINDS: [&str; 6] = ["dense", "conv2d", "relu", "maxpool", "flatten", "softmax"];

/// A neuron of a trainable layer. `layer` counts trainable layers only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: u16,
    pub unit: u32,
}

impl NeuronId {
    pub fn new(layer: u16, unit: u32) -> Self {
        NeuronId { layer, unit }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{}", self.layer, self.unit)
    }
}

/// Tensor shape: a flat feature vector or a channels-first image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Flat(n) => vec![n],
            Shape::Image {
                channels,
                height,
                width,
            } => vec![channels, height, width],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        let shape = match *dims {
            [n] => Shape::Flat(n),
            [channels, height, width] => Shape::Image {
                channels,
                height,
                width,
            },
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "shape must have 1 or 3 dimensions, got {dims:?}"
                )))
            }
        };
        if dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "shape dimensions must be positive, got {dims:?}"
            )));
        }
        Ok(shape)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}

impl Serialize for Shape {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.dims().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Shape {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let dims = Vec::<usize>::deserialize(deserializer)?;
        Shape::from_dims(&dims).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
    },
    Relu,
    Maxpool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    fn is_nonlinearity(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::Softmax)
    }

    /// Number of f32 parameters (weights then bias) the layer owns.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => out_channels * in_channels * kernel_h * kernel_w + out_channels,
            _ => 0,
        }
    }

    fn validate_params(&self, position: usize) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::MalformedHeader(format!(
                "layer {position}: {what} must be strictly positive"
            )))
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return bad("dense in/out");
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                    return bad("conv2d channels and kernel size");
                }
                if stride == 0 {
                    return bad("conv2d stride");
                }
            }
            LayerSpec::Maxpool { kernel, stride } if (kernel == 0 || stride == 0) => {
                return bad("maxpool kernel and stride");
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape for the given input shape, or a shape error.
    fn output_shape(&self, position: usize, input: Shape) -> Result<Shape> {
        let mismatch = |msg: String| Err(Error::ShapeMismatch(format!("layer {position}: {msg}")));
        match (*self, input) {
            (LayerSpec::Dense { inputs, outputs }, Shape::Flat(n)) => {
                if n != inputs {
                    return mismatch(format!("dense expects {inputs} inputs, receives {n}"));
                }
                Ok(Shape::Flat(outputs))
            }
            (LayerSpec::Dense { .. }, other) => {
                mismatch(format!("dense needs a flat input, receives {other} (missing flatten?)"))
            }
            (
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                },
                Shape::Image {
                    channels,
                    height,
                    width,
                },
            ) => {
                if channels != in_channels {
                    return mismatch(format!("conv2d expects {in_channels} channels, receives {channels}"));
                }
                let (oh, ow) = match padding {
                    Padding::Valid => {
                        if height < kernel_h || width < kernel_w {
                            return mismatch(format!(
                                "kernel {kernel_h}x{kernel_w} larger than input {height}x{width}"
                            ));
                        }
                        ((height - kernel_h) / stride + 1, (width - kernel_w) / stride + 1)
                    }
                    Padding::Same => (height.div_ceil(stride), width.div_ceil(stride)),
                };
                Ok(Shape::Image {
                    channels: out_channels,
                    height: oh,
                    width: ow,
                })
            }
            (LayerSpec::Conv2d { .. }, other) => mismatch(format!("conv2d needs an image input, receives {other}")),
            (
                LayerSpec::Maxpool { kernel, stride },
                Shape::Image {
                    channels,
                    height,
                    width,
                },
            ) => {
                if height < kernel || width < kernel {
                    return mismatch(format!("pool window {kernel} larger than input {height}x{width}"));
                }
                Ok(Shape::Image {
                    channels,
                    height: (height - kernel) / stride + 1,
                    width: (width - kernel) / stride + 1,
                })
            }
            (LayerSpec::Maxpool { .. }, other) => mismatch(format!("maxpool needs an image input, receives {other}")),
            (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.len())),
            (LayerSpec::Relu | LayerSpec::Softmax, s) => Ok(s),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    input_shape: Shape,
    layers: Vec<LayerSpec>,
}

/// Where a trainable layer's activation is read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ActivationTap {
    /// After the nonlinearity that immediately follows the layer, if any.
    #[default]
    PostNonlinearity,
    /// Raw affine output of the layer, before any nonlinearity.
    PreNonlinearity,
}

#[derive(Clone, Debug)]
struct Stage {
    spec: LayerSpec,
    input: Shape,
    output: Shape,
    param_offset: usize,
    trainable: Option<u16>,
}

#[derive(Clone, Debug)]
struct TrainableLayer {
    width: usize,
    neuron_offset: usize,
}

/// A validated, immutable feedforward model.
#[derive(Clone, Debug)]
pub struct Model {
    name: String,
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    weights: Vec<f32>,
    stages: Vec<Stage>,
    trainable: Vec<TrainableLayer>,
    neuron_count: usize,
}

/// Activations of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerActivations {
    /// One value per neuron, in canonical [`NeuronId`] order.
    pub neurons: Vec<f32>,
    /// Flattened final layer output (class probabilities when the model ends
    /// in softmax).
    pub output: Vec<f32>,
}

impl Model {
    pub fn new(name: impl Into<String>, input_shape: Shape, layers: Vec<LayerSpec>, weights: Vec<f32>) -> Result<Self> {
        let mut stages = Vec::with_capacity(layers.len());
        let mut trainable = Vec::new();
        let mut shape = input_shape;
        let mut param_offset = 0usize;
        let mut neuron_count = 0usize;
        for (position, spec) in layers.iter().enumerate() {
            spec.validate_params(position)?;
            let output = spec.output_shape(position, shape)?;
            let trainable_index = if spec.is_trainable() {
                let width = match *spec {
                    LayerSpec::Dense { outputs, .. } => outputs,
                    LayerSpec::Conv2d { out_channels, .. } => out_channels,
                    _ => unreachable!(),
                };
                let index = u16::try_from(trainable.len())
                    .map_err(|_| Error::MalformedHeader("more than 65535 trainable layers".into()))?;
                trainable.push(TrainableLayer {
                    width,
                    neuron_offset: neuron_count,
                });
                neuron_count += width;
                Some(index)
            } else {
                None
            };
            stages.push(Stage {
                spec: *spec,
                input: shape,
                output,
                param_offset,
                trainable: trainable_index,
            });
            param_offset += spec.param_count();
            shape = output;
        }
        if trainable.is_empty() {
            return Err(Error::MalformedHeader(
                "model has no trainable (dense or conv2d) layer".into(),
            ));
        }
        if weights.len() != param_offset {
            return Err(Error::ShapeMismatch(format!(
                "weight blob holds {} floats, layers require {param_offset}",
                weights.len()
            )));
        }
        Ok(Model {
            name: name.into(),
            input_shape,
            layers,
            weights,
            stages,
            trainable,
            neuron_count,
        })
    }

    /// Parses a `DKNN` v1 file.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[0..4] != MODEL_MAGIC {
            return Err(Error::MalformedHeader("missing DKNN magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::MalformedHeader("header length exceeds file size".into()))?;
        let raw: serde_json::Value =
            serde_json::from_slice(&bytes[12..header_end]).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        if let Some(layers) = raw.get("layers").and_then(|l| l.as_array()) {
            for layer in layers {
                match layer.get("kind").and_then(|k| k.as_str()) {
                    Some(kind) if KNOWN_KINDS.contains(&kind) => {}
                    Some(kind) => return Err(Error::UnsupportedLayerKind(kind.to_string())),
                    None => return Err(Error::MalformedHeader("layer without `kind`".into())),
                }
            }
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| Error::MalformedHeader(e.to_string()))?;

        let blob = &bytes[header_end..];
        if !blob.len().is_multiple_of(4) {
            return Err(Error::ShapeMismatch(format!(
                "weight blob of {} bytes is not a whole number of f32 values",
                blob.len()
            )));
        }
        let weights = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Model::new(header.name, header.input_shape, header.layers, weights)
    }

    /// Serializes to `DKNN` v1. `from_bytes(to_bytes(m))` reproduces `m` exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            name: self.name.clone(),
            input_shape: self.input_shape,
            layers: self.layers.clone(),
        };
        let json = serde_json::to_vec(&header).expect("model header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + self.weights.len() * 4);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn trainable_layer_count(&self) -> usize {
        self.trainable.len()
    }

    /// Total neuron count over all trainable layers.
    pub fn neuron_count(&self) -> usize {
        self.neuron_count
    }

    /// All neurons in canonical order: by trainable layer, then unit.
    pub fn neurons(&self) -> Vec<NeuronId> {
        self.trainable
            .iter()
            .enumerate()
            .flat_map(|(layer, t)| (0..t.width).map(move |unit| NeuronId::new(layer as u16, unit as u32)))
            .collect()
    }

    /// Position of `neuron` in the canonical flat order.
    pub fn flat_index(&self, neuron: NeuronId) -> Option<usize> {
        let layer = self.trainable.get(neuron.layer as usize)?;
        let unit = neuron.unit as usize;
        (unit < layer.width).then_some(layer.neuron_offset + unit)
    }

    pub fn forward(&self, input: &[f32]) -> Result<LayerActivations> {
        self.forward_with(input, ActivationTap::PostNonlinearity)
    }

    pub fn forward_with(&self, input: &[f32], tap: ActivationTap) -> Result<LayerActivations> {
        if input.len() != self.input_shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, model expects {} ({})",
                input.len(),
                self.input_shape.len(),
                self.input_shape
            )));
        }
        if let Some(pos) = input.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(pos));
        }

        let mut neurons = vec![0f32; self.neuron_count];
        let mut current = input.to_vec();
        // Trainable layer whose activation is taken after the next stage.
        let mut pending: Option<u16> = None;
        for (position, stage) in self.stages.iter().enumerate() {
            current = self.apply(stage, &current);
            if let Some(layer) = pending.take() {
                self.record(layer, stage.output, &current, &mut neurons);
            }
            if let Some(layer) = stage.trainable {
                let followed_by_nonlinearity = self
                    .stages
                    .get(position + 1)
                    .is_some_and(|next| next.spec.is_nonlinearity());
                if tap == ActivationTap::PostNonlinearity && followed_by_nonlinearity {
                    pending = Some(layer);
                } else {
                    self.record(layer, stage.output, &current, &mut neurons);
                }
            }
        }
        Ok(LayerActivations {
            neurons,
            output: current,
        })
    }

    fn record(&self, layer: u16, shape: Shape, values: &[f32], neurons: &mut [f32]) {
        let layer = &self.trainable[layer as usize];
        let dst = &mut neurons[layer.neuron_offset..layer.neuron_offset + layer.width];
        match shape {
            Shape::Flat(_) => dst.copy_from_slice(values),
            Shape::Image { height, width, .. } => {
                let plane = height * width;
                for (channel, slot) in dst.iter_mut().enumerate() {
                    let sum: f64 = values[channel * plane..(channel + 1) * plane]
                        .iter()
                        .map(|&v| v as f64)
                        .sum();
                    *slot = (sum / plane as f64) as f32;
                }
            }
        }
    }

    fn apply(&self, stage: &Stage, input: &[f32]) -> Vec<f32> {
        let params = &self.weights[stage.param_offset..stage.param_offset + stage.spec.param_count()];
        match stage.spec {
            LayerSpec::Dense { inputs, outputs } => dense(params, inputs, outputs, input),
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                stride,
                padding,
                ..
            } => conv2d(
                params,
                stage.input,
                stage.output,
                kernel_h,
                kernel_w,
                stride,
                padding,
                input,
            ),
            LayerSpec::Maxpool { kernel, stride } => maxpool(stage.input, stage.output, kernel, stride, input),
            LayerSpec::Relu => input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            LayerSpec::Softmax => softmax(input),
            LayerSpec::Flatten => input.to_vec(),
        }
    }
}

fn dense(params: &[f32], inputs: usize, outputs: usize, x: &[f32]) -> Vec<f32> {
    let (w, b) = params.split_at(inputs * outputs);
    (0..outputs)
        .map(|o| {
            let row = &w[o * inputs..(o + 1) * inputs];
            let acc: f64 = row.iter().zip(x).map(|(&w, &x)| w as f64 * x as f64).sum();
            (acc + b[o] as f64) as f32
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn conv2d(
    params: &[f32],
    input: Shape,
    output: Shape,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
    x: &[f32],
) -> Vec<f32> {
    let Shape::Image {
        channels: in_ch,
        height: ih,
        width: iw,
    } = input
    else {
        unreachable!("validated at load")
    };
    let Shape::Image {
        channels: out_ch,
        height: oh,
        width: ow,
    } = output
    else {
        unreachable!("validated at load")
    };
    let (pad_top, pad_left) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => {
            let total_h = ((oh - 1) * stride + kh).saturating_sub(ih);
            let total_w = ((ow - 1) * stride + kw).saturating_sub(iw);
            (total_h / 2, total_w / 2)
        }
    };
    let (w, b) = params.split_at(out_ch * in_ch * kh * kw);
    let mut out = vec![0f32; out_ch * oh * ow];
    for oc in 0..out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[oc] as f64;
                for ic in 0..in_ch {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad_top as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad_left as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let wv = w[((oc * in_ch + ic) * kh + ky) * kw + kx];
                            let xv = x[(ic * ih + iy as usize) * iw + ix as usize];
                            acc += wv as f64 * xv as f64;
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc as f32;
            }
        }
    }
    out
}

fn maxpool(input: Shape, output: Shape, kernel: usize, stride: usize, x: &[f32]) -> Vec<f32> {
    let Shape::Image {
        channels,
        height: ih,
        width: iw,
    } = input
    else {
        unreachable!("validated at load")
    };
    let Shape::Image {
        height: oh, width: ow, ..
    } = output
    else {
        unreachable!("validated at load")
    };
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let v = x[(c * ih + oy * stride + ky) * iw + ox * stride + kx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

fn softmax(x: &[f32]) -> Vec<f32> {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = x.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| (e / total) as f32).collect()
}
