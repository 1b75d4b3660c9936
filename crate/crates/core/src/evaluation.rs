//! Threshold-free metrics, average class activation maps, agreement with
//! human saliency, and the data-scaling crossover.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::datasets::Sample;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::loss::{
    model_saliency, saliency_distance, softmax, CamClass, DistanceMeasure, MeasureKind,
};
use crate::model::{Backbone, ModelProbe};
use crate::saliency::{align_heatmap, SaliencyMap, SaliencySource};
use crate::CropBox;

/// Indices sorted by descending score, ties adjacent.
fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Area under the ROC curve, equal to the Mann-Whitney statistic: the
/// fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half. `labels[i]` is true for the positive (atypical) class.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    // Walk groups of tied scores from lowest to highest, counting in half units
    // so the result is an exact ratio of integers.
    let mut idx = order_desc(scores);
    idx.reverse();
    let mut neg_below: u64 = 0;
    let mut twice_u: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * n_pos as u64 * n_neg as u64) as f64)
}

/// Step-wise average precision: the sum over distinct score thresholds,
/// from high to low, of recall increment times precision at that threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let idx = order_desc(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let mut dtp = 0;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] {
                dtp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += dtp;
        if dtp > 0 {
            ap += (dtp as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        i = j;
    }
    Ok(ap)
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            format!("{} labels", scores.len()),
            format!("{}", labels.len()),
        ));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    Ok(())
}

/// Fraction of samples whose top logit is the true class.
pub fn accuracy(probes: &[ModelProbe], labels: &[usize]) -> f64 {
    let correct = probes
        .iter()
        .zip(labels)
        .filter(|(p, &y)| p.predicted_class() == y)
        .count();
    correct as f64 / probes.len().max(1) as f64
}

/// Probability assigned to the atypical class.
pub fn positive_score(probe: &ModelProbe) -> f64 {
    softmax(&probe.logits)[1]
}

fn cam_for_sample<B: Backbone>(model: &B, sample: &Sample, cam_class: CamClass) -> Result<Grid> {
    let (probe, _) = model.forward(&sample.image)?;
    let class = match cam_class {
        CamClass::TrueLabel => sample.label.index(),
        CamClass::Predicted => probe.predicted_class(),
    };
    model_saliency(&probe, class)
}

/// Mean normalized CAM over a split, accumulated in split order.
pub fn average_cam<B: Backbone>(
    model: &B,
    split: &[Sample],
    cam_class: CamClass,
) -> Result<SaliencyMap> {
    let first = split
        .first()
        .ok_or_else(|| Error::EmptySplit("average CAM of an empty split".into()))?;
    let mut acc = cam_for_sample(model, first, cam_class)?;
    for s in &split[1..] {
        let cam = cam_for_sample(model, s, cam_class)?;
        for (a, v) in acc.as_mut_slice().iter_mut().zip(cam.as_slice()) {
            *a += v;
        }
    }
    let n = split.len() as f64;
    Ok(SaliencyMap::clamped(
        acc.map(|v| v / n),
        SaliencySource::Synthetic,
    ))
}

/// Mean distance between each sample's human map (resized to the CAM grid)
/// and the model's normalized CAM, for every measure. Lower is closer.
pub fn cam_human_agreement<B: Backbone>(
    model: &B,
    split: &[Sample],
    cam_class: CamClass,
) -> Result<BTreeMap<MeasureKind, f64>> {
    if split.is_empty() {
        return Err(Error::EmptySplit("agreement over an empty split".into()));
    }
    let mut totals: BTreeMap<MeasureKind, f64> =
        MeasureKind::ALL.iter().map(|&k| (k, 0.0)).collect();
    for s in split {
        let human = s
            .saliency
            .as_ref()
            .ok_or_else(|| Error::MissingSaliency(s.id.clone()))?;
        let cam = cam_for_sample(model, s, cam_class)?;
        let aligned = align_heatmap(
            human,
            &CropBox::full(human.values()),
            cam.width(),
            cam.height(),
        )?;
        for (kind, total) in totals.iter_mut() {
            *total += saliency_distance(&cam, aligned.values(), &DistanceMeasure::new(*kind))?;
        }
    }
    let n = split.len() as f64;
    totals.values_mut().for_each(|v| *v /= n);
    Ok(totals)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossover {
    At(f64),
    NotReached,
}

/// Steps the crossover interpolation fraction is rounded to, so decimal
/// inputs such as 0.80/0.90/0.85 land on their exact decimal crossover.
pub const CROSSOVER_RESOLUTION: f64 = 1e12;

/// Smallest training-set multiple at which the traditional mean AUC reaches
/// `target`, linearly interpolated between bracketing multiples.
pub fn scaling_crossover(target: f64, series: &[(f64, f64)]) -> Result<Crossover> {
    if series.len() < 2 {
        return Err(Error::InsufficientPoints(series.len()));
    }
    if !target.is_finite() || series.iter().any(|(m, a)| !m.is_finite() || !a.is_finite()) {
        return Err(Error::NonFinite("crossover inputs must be finite".into()));
    }
    let mut pts = series.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts[0].1 >= target {
        return Ok(Crossover::At(pts[0].0));
    }
    for w in pts.windows(2) {
        let ((m0, a0), (m1, a1)) = (w[0], w[1]);
        if a1 >= target {
            let frac =
                ((target - a0) / (a1 - a0) * CROSSOVER_RESOLUTION).round() / CROSSOVER_RESOLUTION;
            return Ok(Crossover::At(m0 + frac * (m1 - m0)));
        }
    }
    Ok(Crossover::NotReached)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Piecewise-linear "jet" colormap.
pub fn jet(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let channel = |offset: f64| {
        let x = 1.5 - (4.0 * v - offset).abs();
        (x.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    Rgb([channel(3.0), channel(2.0), channel(1.0)])
}

/// Colormapped render of a map, each cell drawn as a `scale x scale` block.
pub fn render_heatmap(map: &Grid, scale: u32) -> RgbImage {
    let scale = scale.max(1);
    RgbImage::from_fn(
        map.width() as u32 * scale,
        map.height() as u32 * scale,
        |x, y| jet(map.get((x / scale) as usize, (y / scale) as usize)),
    )
}

pub fn save_heatmap_png(map: &Grid, scale: u32, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    render_heatmap(map, scale).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Line chart of curves sharing an x axis of epochs, values in `[0, 1]`.
/// Colors follow `palette` in order; a faint grid marks tenths.
pub fn render_curves(curves: &[&[f64]], width: u32, height: u32) -> RgbImage {
    const PALETTE: [[u8; 3]; 6] = [
        [31, 119, 180],
        [255, 127, 14],
        [44, 160, 44],
        [214, 39, 40],
        [148, 103, 189],
        [140, 86, 75],
    ];
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 8u32;
    let (pw, ph) = (
        width.saturating_sub(2 * margin).max(1),
        height.saturating_sub(2 * margin).max(1),
    );
    for t in 0..=10 {
        let y = margin + ph - (ph * t) / 10;
        for x in margin..margin + pw {
            img.put_pixel(x, y.min(height - 1), Rgb([225, 225, 225]));
        }
    }
    let longest = curves.iter().map(|c| c.len()).max().unwrap_or(0);
    let to_px = |i: usize, v: f64| {
        let x = margin as f64 + pw as f64 * i as f64 / (longest.max(2) - 1) as f64;
        let y = margin as f64 + ph as f64 * (1.0 - v.clamp(0.0, 1.0));
        (x, y)
    };
    for (ci, curve) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[ci % PALETTE.len()]);
        for i in 1..curve.len() {
            let (x0, y0) = to_px(i - 1, curve[i - 1]);
            let (x1, y1) = to_px(i, curve[i]);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
                let (px, py) = (x.round() as u32, y.round() as u32);
                if px < width && py < height {
                    img.put_pixel(px, py, color);
                }
            }
        }
    }
    img
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub domain: String,
    pub architecture: String,
    pub setting: String,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_ap: f64,
    pub std_ap: f64,
}

pub const RESULT_COLUMNS: [&str; 7] = [
    "domain",
    "architecture",
    "setting",
    "mean_auc",
    "std_auc",
    "mean_ap",
    "std_ap",
];

/// Appends rows to a results CSV, writing the header when the file is new.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = !path.exists();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_COLUMNS {
        return Err(Error::SchemaError(format!(
            "unexpected results header {header:?}"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
