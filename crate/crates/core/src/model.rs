//! Backbone adapter: every classifier used for saliency-guided training must
//! expose its logits together with the last convolutional feature maps and
//! the final linear layer's per-class weights, all from one forward pass.
//!
//! [`ToyCnn`] is the desk-scale backbone: conv/ReLU/avg-pool stages, global
//! average pooling, and a linear classifier. Gradients are computed by hand
//! in double precision.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Toy CNN input standardization applied to `[0, 1]` pixels.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "toy_cnn")]
    ToyCnn,
    #[serde(rename = "densenet121")]
    DenseNet121,
    #[serde(rename = "resnet50")]
    ResNet50,
    #[serde(rename = "inception_v3")]
    InceptionV3,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::ToyCnn,
        Architecture::DenseNet121,
        Architecture::ResNet50,
        Architecture::InceptionV3,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::ToyCnn => "toy_cnn",
            Architecture::DenseNet121 => "densenet121",
            Architecture::ResNet50 => "resnet50",
            Architecture::InceptionV3 => "inception_v3",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toy_cnn" | "toy" => Ok(Architecture::ToyCnn),
            "densenet121" | "densenet" => Ok(Architecture::DenseNet121),
            "resnet50" | "resnet" => Ok(Architecture::ResNet50),
            "inception_v3" | "inception" => Ok(Architecture::InceptionV3),
            other => Err(Error::ConfigInvalid(format!(
                "unknown architecture {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Seed(u64),
    Pretrained(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub architecture: Architecture,
    /// Square input side length in pixels.
    pub input_size: usize,
    pub classes: usize,
    pub init: Init,
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::ConfigInvalid(format!(
                "class count {} must be at least 2",
                self.classes
            )));
        }
        if self.input_size == 0 {
            return Err(Error::ConfigInvalid("input size must be positive".into()));
        }
        Ok(())
    }
}

/// What one forward pass exposes for the saliency term.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelProbe {
    pub logits: Vec<f64>,
    /// Last-stage activations before global pooling, one map per channel.
    pub feature_maps: Vec<Grid>,
    /// `class_weights[c][n]` multiplies pooled channel `n` in the logit of class `c`.
    pub class_weights: Vec<Vec<f64>>,
}

impl ModelProbe {
    pub fn classes(&self) -> usize {
        self.logits.len()
    }

    pub fn channels(&self) -> usize {
        self.feature_maps.len()
    }

    pub fn map_dims(&self) -> (usize, usize) {
        self.feature_maps[0].dims()
    }

    pub fn predicted_class(&self) -> usize {
        let mut best = 0;
        for (c, &z) in self.logits.iter().enumerate() {
            if z > self.logits[best] {
                best = c;
            }
        }
        best
    }
}

/// Gradient of a scalar loss with respect to each entry of a [`ModelProbe`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeGrad {
    pub logits: Vec<f64>,
    pub feature_maps: Vec<Grid>,
    pub class_weights: Vec<Vec<f64>>,
}

impl ProbeGrad {
    pub fn zeros_like(probe: &ModelProbe) -> Self {
        let (w, h) = probe.map_dims();
        Self {
            logits: vec![0.0; probe.classes()],
            feature_maps: vec![Grid::zeros(w, h); probe.channels()],
            class_weights: vec![vec![0.0; probe.channels()]; probe.classes()],
        }
    }
}

pub trait Backbone {
    /// Intermediate activations needed by [`Backbone::backward`].
    type Trace;

    fn spec(&self) -> &BackboneSpec;

    fn forward(&self, image: &Grid) -> Result<(ModelProbe, Self::Trace)>;

    /// Accumulates d(loss)/d(parameters) into `param_grad`, given the loss
    /// gradient with respect to the probe produced alongside `trace`.
    fn backward(&self, trace: &Self::Trace, grad: &ProbeGrad, param_grad: &mut [f64]);

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];
}

pub fn forward_with_probe<B: Backbone>(model: &B, images: &[&Grid]) -> Result<Vec<ModelProbe>> {
    if images.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    images
        .iter()
        .map(|img| model.forward(img).map(|(p, _)| p))
        .collect()
}

#[derive(Clone, Debug)]
struct Volume {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Volume {
    fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct StageLayout {
    in_channels: usize,
    out_channels: usize,
    /// Side length entering the stage.
    size: usize,
    pool: bool,
    kernel_offset: usize,
    bias_offset: usize,
}

impl StageLayout {
    fn out_size(&self) -> usize {
        if self.pool {
            self.size / 2
        } else {
            self.size
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageTrace {
    input: Volume,
    pre_activation: Volume,
}

#[derive(Clone, Debug)]
pub struct ToyTrace {
    stages: Vec<StageTrace>,
    features: Volume,
    pooled: Vec<f64>,
}

/// Default channel widths of the three convolution stages.
pub const TOY_CHANNELS: [usize; 3] = [8, 16, 8];

/// Pooling halves the map only while the result stays at least this wide.
const MIN_MAP_SIZE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCnn {
    spec: BackboneSpec,
    channels: Vec<usize>,
    stages: Vec<StageLayout>,
    weight_offset: usize,
    bias_offset: usize,
    params: Vec<f64>,
}

impl ToyCnn {
    /// `make_toy_cnn` with the default stage widths.
    pub fn new(seed: u64, input_size: usize, classes: usize) -> Result<Self> {
        Self::with_channels(seed, input_size, classes, &TOY_CHANNELS)
    }

    pub fn with_channels(
        seed: u64,
        input_size: usize,
        classes: usize,
        channels: &[usize],
    ) -> Result<Self> {
        let spec = BackboneSpec {
            architecture: Architecture::ToyCnn,
            input_size,
            classes,
            init: Init::Seed(seed),
        };
        let mut model = Self::layout(spec, channels)?;
        model.initialize(seed);
        Ok(model)
    }

    fn layout(spec: BackboneSpec, channels: &[usize]) -> Result<Self> {
        spec.validate()?;
        if spec.architecture != Architecture::ToyCnn {
            return Err(Error::BackboneUnavailable(spec.architecture.id().into()));
        }
        if spec.input_size < 16 {
            return Err(Error::ConfigInvalid(format!(
                "toy CNN input size {} must be at least 16",
                spec.input_size
            )));
        }
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::ConfigInvalid(format!(
                "invalid channel widths {channels:?}"
            )));
        }
        let mut stages = Vec::with_capacity(channels.len());
        let mut offset = 0;
        let mut size = spec.input_size;
        let mut in_channels = 1;
        for &out_channels in channels {
            let pool = size % 2 == 0 && size / 2 >= MIN_MAP_SIZE;
            let kernel_offset = offset;
            offset += out_channels * in_channels * 9;
            let bias_offset = offset;
            offset += out_channels;
            let stage = StageLayout {
                in_channels,
                out_channels,
                size,
                pool,
                kernel_offset,
                bias_offset,
            };
            size = stage.out_size();
            in_channels = out_channels;
            stages.push(stage);
        }
        let n = in_channels;
        let weight_offset = offset;
        offset += spec.classes * n;
        let bias_offset = offset;
        offset += spec.classes;
        Ok(Self {
            spec,
            channels: channels.to_vec(),
            stages,
            weight_offset,
            bias_offset,
            params: vec![0.0; offset],
        })
    }

    fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for st in self.stages.clone() {
            let fan_in = (st.in_channels * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            let k = &mut self.params[st.kernel_offset..st.bias_offset];
            for v in k.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        let n = self.feature_channels() as f64;
        let normal = Normal::new(0.0, (1.0 / n).sqrt()).expect("finite std");
        for v in &mut self.params[self.weight_offset..self.bias_offset] {
            *v = normal.sample(&mut rng);
        }
    }

    pub fn feature_channels(&self) -> usize {
        *self.channels.last().expect("at least one stage")
    }

    /// Side length of the final feature maps.
    pub fn map_size(&self) -> usize {
        self.stages.last().expect("at least one stage").out_size()
    }

    pub fn channel_widths(&self) -> &[usize] {
        &self.channels
    }

    pub fn class_weight_index(&self, class: usize, channel: usize) -> usize {
        self.weight_offset + class * self.feature_channels() + channel
    }

    pub fn to_checkpoint(&self, epoch: usize, metrics: CheckpointMetrics) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            channels: self.channels.clone(),
            params: self.params.clone(),
            epoch,
            metrics,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.check_header()?;
        let mut model = Self::layout(ckpt.spec.clone(), &ckpt.channels)?;
        if ckpt.params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter blob has {} values, layout needs {}",
                ckpt.params.len(),
                model.params.len()
            )));
        }
        model.params.copy_from_slice(&ckpt.params);
        Ok(model)
    }

    fn conv_forward(&self, st: &StageLayout, input: &Volume) -> Volume {
        let s = st.size;
        let kernel = &self.params[st.kernel_offset..st.bias_offset];
        let bias = &self.params[st.bias_offset..st.bias_offset + st.out_channels];
        let mut out = Volume::zeros(st.out_channels, s, s);
        for co in 0..st.out_channels {
            let plane = &mut out.data[co * s * s..(co + 1) * s * s];
            plane.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..st.in_channels {
                let src = input.plane(ci);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let w = kernel[((co * st.in_channels + ci) * 3 + ky) * 3 + kx];
                        let (x_lo, x_hi) = valid_range(kx, s);
                        let (y_lo, y_hi) = valid_range(ky, s);
                        for y in y_lo..y_hi {
                            let yi = y + ky - 1;
                            let dst = &mut plane[y * s + x_lo..y * s + x_hi];
                            let row = &src[yi * s + x_lo + kx - 1..yi * s + x_hi + kx - 1];
                            for (d, r) in dst.iter_mut().zip(row) {
                                *d += w * r;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the gradient with respect to the stage input.
    fn conv_backward(
        &self,
        st: &StageLayout,
        input: &Volume,
        grad_out: &Volume,
        param_grad: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Volume> {
        let s = st.size;
        let kernel = &self.params[st.kernel_offset..st.bias_offset];
        let mut grad_in = need_input_grad.then(|| Volume::zeros(st.in_channels, s, s));
        for co in 0..st.out_channels {
            let g = grad_out.plane(co);
            param_grad[st.bias_offset + co] += g.iter().sum::<f64>();
            for ci in 0..st.in_channels {
                let src = input.plane(ci);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let idx = ((co * st.in_channels + ci) * 3 + ky) * 3 + kx;
                        let w = kernel[idx];
                        let (x_lo, x_hi) = valid_range(kx, s);
                        let (y_lo, y_hi) = valid_range(ky, s);
                        let mut acc = 0.0;
                        for y in y_lo..y_hi {
                            let yi = y + ky - 1;
                            let gr = &g[y * s + x_lo..y * s + x_hi];
                            let row = &src[yi * s + x_lo + kx - 1..yi * s + x_hi + kx - 1];
                            acc += gr.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gi) = grad_in.as_mut() {
                                let n = s * s;
                                let dst = &mut gi.data[ci * n + yi * s + x_lo + kx - 1
                                    ..ci * n + yi * s + x_hi + kx - 1];
                                for (d, v) in dst.iter_mut().zip(gr) {
                                    *d += w * v;
                                }
                            }
                        }
                        param_grad[st.kernel_offset + idx] += acc;
                    }
                }
            }
        }
        grad_in
    }
}

/// Output indices whose 3x3 tap at offset `k` reads inside a zero-padded row of length `s`.
#[inline]
fn valid_range(k: usize, s: usize) -> (usize, usize) {
    match k {
        0 => (1, s),
        1 => (0, s),
        _ => (0, s - 1),
    }
}

fn relu_avg_pool(pre: &Volume, pool: bool) -> Volume {
    if !pool {
        let mut out = pre.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        return out;
    }
    let (s, h) = (pre.width, pre.width / 2);
    let mut out = Volume::zeros(pre.channels, h, h);
    for c in 0..pre.channels {
        let p = pre.plane(c);
        for y in 0..h {
            for x in 0..h {
                let a = p[2 * y * s + 2 * x].max(0.0);
                let b = p[2 * y * s + 2 * x + 1].max(0.0);
                let d = p[(2 * y + 1) * s + 2 * x].max(0.0);
                let e = p[(2 * y + 1) * s + 2 * x + 1].max(0.0);
                out.data[c * h * h + y * h + x] = 0.25 * (a + b + d + e);
            }
        }
    }
    out
}

fn relu_avg_pool_backward(pre: &Volume, grad_out: &Volume, pool: bool) -> Volume {
    let s = pre.width;
    let mut g = Volume::zeros(pre.channels, s, s);
    if !pool {
        for (i, v) in g.data.iter_mut().enumerate() {
            if pre.data[i] > 0.0 {
                *v = grad_out.data[i];
            }
        }
        return g;
    }
    let h = s / 2;
    for c in 0..pre.channels {
        for y in 0..s {
            for x in 0..s {
                let i = c * s * s + y * s + x;
                if pre.data[i] > 0.0 {
                    g.data[i] = 0.25 * grad_out.data[c * h * h + (y / 2) * h + x / 2];
                }
            }
        }
    }
    g
}

impl Backbone for ToyCnn {
    type Trace = ToyTrace;

    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn forward(&self, image: &Grid) -> Result<(ModelProbe, ToyTrace)> {
        let s = self.spec.input_size;
        if image.dims() != (s, s) {
            return Err(Error::shape(
                format!("{s}x{s} image"),
                format!("{}x{}", image.width(), image.height()),
            ));
        }
        let mut x = Volume {
            channels: 1,
            height: s,
            width: s,
            data: image
                .as_slice()
                .iter()
                .map(|v| (v - INPUT_MEAN) / INPUT_STD)
                .collect(),
        };
        let mut traces = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            let pre = self.conv_forward(st, &x);
            let next = relu_avg_pool(&pre, st.pool);
            traces.push(StageTrace {
                input: x,
                pre_activation: pre,
            });
            x = next;
        }
        let n = x.channels;
        let area = (x.height * x.width) as f64;
        let pooled: Vec<f64> = (0..n)
            .map(|c| x.plane(c).iter().sum::<f64>() / area)
            .collect();
        let classes = self.spec.classes;
        let weights = &self.params[self.weight_offset..self.bias_offset];
        let bias = &self.params[self.bias_offset..self.bias_offset + classes];
        let class_weights: Vec<Vec<f64>> = (0..classes)
            .map(|c| weights[c * n..(c + 1) * n].to_vec())
            .collect();
        let logits = (0..classes)
            .map(|c| {
                bias[c]
                    + class_weights[c]
                        .iter()
                        .zip(&pooled)
                        .map(|(w, p)| w * p)
                        .sum::<f64>()
            })
            .collect();
        let feature_maps = (0..n)
            .map(|c| Grid::new(x.width, x.height, x.plane(c).to_vec()).expect("nonempty map"))
            .collect();
        let probe = ModelProbe {
            logits,
            feature_maps,
            class_weights,
        };
        Ok((
            probe,
            ToyTrace {
                stages: traces,
                features: x,
                pooled,
            },
        ))
    }

    fn backward(&self, trace: &ToyTrace, grad: &ProbeGrad, param_grad: &mut [f64]) {
        let classes = self.spec.classes;
        let n = trace.features.channels;
        let area = (trace.features.height * trace.features.width) as f64;
        let mut pooled_grad = vec![0.0; n];
        for c in 0..classes {
            let gz = grad.logits[c];
            param_grad[self.bias_offset + c] += gz;
            for k in 0..n {
                let wi = self.weight_offset + c * n + k;
                param_grad[wi] += gz * trace.pooled[k] + grad.class_weights[c][k];
                pooled_grad[k] += gz * self.params[wi];
            }
        }
        let mut g = trace.features.clone();
        for k in 0..n {
            let direct = grad.feature_maps[k].as_slice();
            let plane = &mut g.data[k * direct.len()..(k + 1) * direct.len()];
            for (v, d) in plane.iter_mut().zip(direct) {
                *v = d + pooled_grad[k] / area;
            }
        }
        for (i, st) in self.stages.iter().enumerate().rev() {
            let t = &trace.stages[i];
            let g_pre = relu_avg_pool_backward(&t.pre_activation, &g, st.pool);
            match self.conv_backward(st, &t.input, &g_pre, param_grad, i > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

/// Builds the backbone named by `spec`. Only the toy CNN can be constructed
/// locally; full-scale ids are recognised but need external weights.
pub fn make_model(spec: &BackboneSpec) -> Result<ToyCnn> {
    match (&spec.architecture, &spec.init) {
        (Architecture::ToyCnn, Init::Seed(seed)) => {
            ToyCnn::new(*seed, spec.input_size, spec.classes)
        }
        (arch, init) => Err(Error::BackboneUnavailable(format!(
            "{arch} with {init:?} requires pretrained weights that are not bundled"
        ))),
    }
}

pub const CHECKPOINT_FORMAT: &str = "cyborg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub val_acc: f64,
    pub val_auc: f64,
}

/// Versioned JSON container: backbone spec, flat parameter blob, epoch and
/// validation metrics. JSON floats round-trip `f64` exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: BackboneSpec,
    pub channels: Vec<usize>,
    pub params: Vec<f64>,
    pub epoch: usize,
    pub metrics: CheckpointMetrics,
}

impl Checkpoint {
    fn check_header(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let ckpt: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        ckpt.check_header()?;
        Ok(ckpt)
    }
}
