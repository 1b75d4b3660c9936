//! The saliency-guided composite loss.
//!
//! For a batch of `K` samples with labels `y_k`, human maps `h_k` and model
//! saliency `s_k`,
//!
//! ```text
//! L = 1/K * sum_k [ (1 - alpha) * D(s_k, h_k) - alpha * log p(y_k | x_k) ]
//! ```
//!
//! where `s_k = normalize01(sum_n f_n * w_n^(c))` is the class activation map
//! built from the last convolutional feature maps `f_n` and the final linear
//! layer's weights for class `c`, and `D` is one of five distance measures.
//! `alpha = 1` is plain cross-entropy training.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{ModelProbe, ProbeGrad};

/// Maps whose value range is at most this are treated as constant.
pub const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasureKind {
    #[serde(rename = "L1")]
    L1,
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "SSIM")]
    Ssim,
    #[serde(rename = "SSIM+L1")]
    SsimL1,
    #[serde(rename = "SSIM+MSE")]
    SsimMse,
}

impl MeasureKind {
    /// Declaration order doubles as the tie-break order for ranking.
    pub const ALL: [MeasureKind; 5] = [
        MeasureKind::L1,
        MeasureKind::Mse,
        MeasureKind::Ssim,
        MeasureKind::SsimL1,
        MeasureKind::SsimMse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::L1 => "L1",
            MeasureKind::Mse => "MSE",
            MeasureKind::Ssim => "SSIM",
            MeasureKind::SsimL1 => "SSIM+L1",
            MeasureKind::SsimMse => "SSIM+MSE",
        }
    }

    fn parts(self) -> (bool, bool, bool) {
        // (ssim, l1, mse)
        match self {
            MeasureKind::L1 => (false, true, false),
            MeasureKind::Mse => (false, false, true),
            MeasureKind::Ssim => (true, false, false),
            MeasureKind::SsimL1 => (true, true, false),
            MeasureKind::SsimMse => (true, false, true),
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['_', '-', ' '], "+");
        match norm.as_str() {
            "L1" | "MAE" => Ok(MeasureKind::L1),
            "MSE" | "L2" => Ok(MeasureKind::Mse),
            "SSIM" => Ok(MeasureKind::Ssim),
            "SSIM+L1" | "L1+SSIM" => Ok(MeasureKind::SsimL1),
            "SSIM+MSE" | "MSE+SSIM" => Ok(MeasureKind::SsimMse),
            _ => Err(Error::ConfigInvalid(format!(
                "unknown distance measure {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMeasure {
    pub kind: MeasureKind,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl DistanceMeasure {
    /// SSIM stability constants for a dynamic range of 1.
    pub const DEFAULT_C1: f64 = 0.01 * 0.01;
    pub const DEFAULT_C2: f64 = 0.03 * 0.03;

    pub fn new(kind: MeasureKind) -> Self {
        Self {
            kind,
            ssim_c1: Self::DEFAULT_C1,
            ssim_c2: Self::DEFAULT_C2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "SSIM constants must be positive, got ({}, {})",
                self.ssim_c1, self.ssim_c2
            )));
        }
        Ok(())
    }
}

impl From<MeasureKind> for DistanceMeasure {
    fn from(kind: MeasureKind) -> Self {
        Self::new(kind)
    }
}

/// Which class's weights build the CAM during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamClass {
    #[default]
    TrueLabel,
    Predicted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyborgTerm {
    pub alpha: f64,
    pub measure: DistanceMeasure,
    #[serde(default)]
    pub cam_class: CamClass,
}

impl CyborgTerm {
    pub fn new(alpha: f64, kind: MeasureKind) -> Result<Self> {
        let term = Self {
            alpha,
            measure: DistanceMeasure::new(kind),
            cam_class: CamClass::TrueLabel,
        };
        term.validate()?;
        Ok(term)
    }

    /// Cross-entropy only.
    pub fn traditional() -> Self {
        Self {
            alpha: 1.0,
            measure: DistanceMeasure::new(MeasureKind::Ssim),
            cam_class: CamClass::TrueLabel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::ConfigInvalid(format!(
                "alpha = {} outside [0, 1]",
                self.alpha
            )));
        }
        self.measure.validate()
    }

    pub fn uses_saliency(&self) -> bool {
        self.alpha < 1.0
    }
}

/// Raw class activation map: `sum_n f_n * w_n^(class)`.
pub fn compute_cam(probe: &ModelProbe, class: usize) -> Result<Grid> {
    let weights = probe
        .class_weights
        .get(class)
        .ok_or(Error::IndexOutOfRange {
            index: class,
            classes: probe.class_weights.len(),
        })?;
    if weights.len() != probe.feature_maps.len() {
        return Err(Error::shape(
            format!("{} class weights", probe.feature_maps.len()),
            format!("{}", weights.len()),
        ));
    }
    let (w, h) = probe.map_dims();
    let mut cam = Grid::zeros(w, h);
    for (f, &wn) in probe.feature_maps.iter().zip(weights) {
        f.check_shape(&cam)?;
        for (c, v) in cam.as_mut_slice().iter_mut().zip(f.as_slice()) {
            *c += wn * v;
        }
    }
    Ok(cam)
}

/// Min-max rescale to `[0, 1]`; ε-constant maps become all zeros.
pub fn normalize01(map: &Grid) -> Result<Grid> {
    if let Some(v) = map.as_slice().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("map contains {v}")));
    }
    let (lo, hi) = (map.min(), map.max());
    let range = hi - lo;
    if range <= NORMALIZE_EPS {
        return Ok(Grid::zeros(map.width(), map.height()));
    }
    Ok(map.map(|v| ((v - lo) / range).clamp(0.0, 1.0)))
}

/// Vector-Jacobian product of [`normalize01`] at `map` applied to `grad_out`.
/// The min and max are taken at their first occurrence.
pub fn normalize01_backward(map: &Grid, grad_out: &Grid) -> Grid {
    let x = map.as_slice();
    let (mut imin, mut imax) = (0, 0);
    for (i, &v) in x.iter().enumerate() {
        if v < x[imin] {
            imin = i;
        }
        if v > x[imax] {
            imax = i;
        }
    }
    let range = x[imax] - x[imin];
    let mut g = Grid::zeros(map.width(), map.height());
    if range <= NORMALIZE_EPS {
        return g;
    }
    let go = grad_out.as_slice();
    let mut sum_g = 0.0;
    let mut sum_gy = 0.0;
    for (&gi, &xi) in go.iter().zip(x) {
        sum_g += gi;
        sum_gy += gi * (xi - x[imin]) / range;
    }
    let out = g.as_mut_slice();
    for (o, &gi) in out.iter_mut().zip(go) {
        *o = gi / range;
    }
    out[imin] += (sum_gy - sum_g) / range;
    out[imax] -= sum_gy / range;
    g
}

struct SsimStats {
    n: f64,
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn ssim_stats(a: &[f64], b: &[f64]) -> SsimStats {
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mu_a, y - mu_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    SsimStats {
        n,
        mu_a,
        mu_b,
        var_a: var_a / n,
        var_b: var_b / n,
        cov: cov / n,
    }
}

/// Single-window SSIM over the whole map.
pub fn global_ssim(a: &Grid, b: &Grid, c1: f64, c2: f64) -> Result<f64> {
    a.check_shape(b)?;
    let s = ssim_stats(a.as_slice(), b.as_slice());
    Ok((2.0 * s.mu_a * s.mu_b + c1) * (2.0 * s.cov + c2)
        / ((s.mu_a * s.mu_a + s.mu_b * s.mu_b + c1) * (s.var_a + s.var_b + c2)))
}

/// Distance between a model map `a` and a human map `b`, optionally with its
/// gradient with respect to `a`.
pub fn saliency_distance_with_grad(
    a: &Grid,
    b: &Grid,
    m: &DistanceMeasure,
    want_grad: bool,
) -> Result<(f64, Option<Grid>)> {
    a.check_shape(b)?;
    let (xa, xb) = (a.as_slice(), b.as_slice());
    let n = xa.len() as f64;
    let (use_ssim, use_l1, use_mse) = m.kind.parts();
    let mut value = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; xa.len()]);

    if use_ssim {
        let s = ssim_stats(xa, xb);
        let a1 = 2.0 * s.mu_a * s.mu_b + m.ssim_c1;
        let a2 = 2.0 * s.cov + m.ssim_c2;
        let b1 = s.mu_a * s.mu_a + s.mu_b * s.mu_b + m.ssim_c1;
        let b2 = s.var_a + s.var_b + m.ssim_c2;
        let ssim = a1 * a2 / (b1 * b2);
        value += 1.0 - ssim;
        if let Some(g) = grad.as_mut() {
            for (gi, (&x, &y)) in g.iter_mut().zip(xa.iter().zip(xb)) {
                let da1 = 2.0 * s.mu_b / s.n;
                let da2 = 2.0 * (y - s.mu_b) / s.n;
                let db1 = 2.0 * s.mu_a / s.n;
                let db2 = 2.0 * (x - s.mu_a) / s.n;
                *gi -= ssim * (da1 / a1 + da2 / a2 - db1 / b1 - db2 / b2);
            }
        }
    }
    if use_l1 {
        value += xa.iter().zip(xb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        if let Some(g) = grad.as_mut() {
            for (gi, (&x, &y)) in g.iter_mut().zip(xa.iter().zip(xb)) {
                let d = x - y;
                if d != 0.0 {
                    *gi += d.signum() / n;
                }
            }
        }
    }
    if use_mse {
        value += xa
            .iter()
            .zip(xb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        if let Some(g) = grad.as_mut() {
            for (gi, (&x, &y)) in g.iter_mut().zip(xa.iter().zip(xb)) {
                *gi += 2.0 * (x - y) / n;
            }
        }
    }
    let grad = grad.map(|g| Grid::new(a.width(), a.height(), g).expect("same shape as input"));
    Ok((value, grad))
}

pub fn saliency_distance(a: &Grid, b: &Grid, m: &DistanceMeasure) -> Result<f64> {
    saliency_distance_with_grad(a, b, m, false).map(|(v, _)| v)
}

/// Numerically stable `log softmax(logits)[class]`.
pub fn log_softmax_at(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[class] - lse
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy(probes: &[ModelProbe], labels: &[usize]) -> Result<f64> {
    check_labels(probes, labels)?;
    let total: f64 = probes
        .iter()
        .zip(labels)
        .map(|(p, &y)| -log_softmax_at(&p.logits, y))
        .sum();
    Ok(total / probes.len() as f64)
}

fn check_labels(probes: &[ModelProbe], labels: &[usize]) -> Result<()> {
    if probes.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if probes.len() != labels.len() {
        return Err(Error::shape(
            format!("{} labels", probes.len()),
            format!("{}", labels.len()),
        ));
    }
    for (p, &y) in probes.iter().zip(labels) {
        if y >= p.classes() {
            return Err(Error::IndexOutOfRange {
                index: y,
                classes: p.classes(),
            });
        }
    }
    Ok(())
}

fn cam_class(term: &CyborgTerm, probe: &ModelProbe, label: usize) -> usize {
    match term.cam_class {
        CamClass::TrueLabel => label,
        CamClass::Predicted => probe.predicted_class(),
    }
}

/// Normalized model saliency for one sample.
pub fn model_saliency(probe: &ModelProbe, class: usize) -> Result<Grid> {
    normalize01(&compute_cam(probe, class)?)
}

/// Batch loss and, when requested, its gradient with respect to every probe.
///
/// `human_maps[k]` must already be resized to the CAM grid. Maps may be
/// missing only when `alpha == 1`, where the saliency term is skipped.
pub fn cyborg_batch_loss_with_grad(
    probes: &[ModelProbe],
    human_maps: &[Option<&Grid>],
    labels: &[usize],
    term: &CyborgTerm,
    want_grad: bool,
) -> Result<(f64, Option<Vec<ProbeGrad>>)> {
    term.validate()?;
    check_labels(probes, labels)?;
    if human_maps.len() != probes.len() {
        return Err(Error::shape(
            format!("{} human maps", probes.len()),
            format!("{}", human_maps.len()),
        ));
    }
    let k = probes.len() as f64;
    let alpha = term.alpha;
    let mut total = 0.0;
    let mut grads = want_grad.then(|| Vec::with_capacity(probes.len()));

    for (i, (probe, &y)) in probes.iter().zip(labels).enumerate() {
        let ce = -log_softmax_at(&probe.logits, y);
        let mut g = want_grad.then(|| ProbeGrad::zeros_like(probe));
        if let Some(g) = g.as_mut() {
            let p = softmax(&probe.logits);
            for (c, gz) in g.logits.iter_mut().enumerate() {
                let onehot = if c == y { 1.0 } else { 0.0 };
                *gz = alpha * (p[c] - onehot) / k;
            }
        }

        let mut sample = alpha * ce;
        if term.uses_saliency() {
            let human =
                human_maps[i].ok_or_else(|| Error::MissingSaliency(format!("batch index {i}")))?;
            let class = cam_class(term, probe, y);
            let cam = compute_cam(probe, class)?;
            let s_model = normalize01(&cam)?;
            let (dist, dgrad) =
                saliency_distance_with_grad(&s_model, human, &term.measure, want_grad)?;
            sample = (1.0 - alpha) * dist + alpha * ce;
            if let (Some(g), Some(ds)) = (g.as_mut(), dgrad) {
                let scale = (1.0 - alpha) / k;
                let dcam = normalize01_backward(&cam, &ds.map(|v| v * scale));
                let weights = &probe.class_weights[class];
                for (n, f) in probe.feature_maps.iter().enumerate() {
                    let gf = g.feature_maps[n].as_mut_slice();
                    let mut gw = 0.0;
                    for ((gfi, &dc), &fi) in gf.iter_mut().zip(dcam.as_slice()).zip(f.as_slice()) {
                        *gfi += weights[n] * dc;
                        gw += dc * fi;
                    }
                    g.class_weights[class][n] += gw;
                }
            }
        }
        total += sample;
        if let (Some(gs), Some(g)) = (grads.as_mut(), g) {
            gs.push(g);
        }
    }
    Ok((total / k, grads))
}

pub fn cyborg_batch_loss(
    probes: &[ModelProbe],
    human_maps: &[Option<&Grid>],
    labels: &[usize],
    term: &CyborgTerm,
) -> Result<f64> {
    cyborg_batch_loss_with_grad(probes, human_maps, labels, term, false).map(|(v, _)| v)
}
