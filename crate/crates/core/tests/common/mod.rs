//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod criteria;

use cyborg::grid::Grid;
use cyborg::model::ModelProbe;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Grid {
    Grid::from_fn(w, h, |_, _| rng.random::<f64>())
}

pub fn random_probe(
    rng: &mut ChaCha8Rng,
    channels: usize,
    size: usize,
    classes: usize,
) -> ModelProbe {
    ModelProbe {
        logits: (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect(),
        feature_maps: (0..channels)
            .map(|_| random_grid(rng, size, size))
            .collect(),
        class_weights: (0..classes)
            .map(|_| (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
    }
}

/// Relative error with an absolute floor for gradients near zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Mann-Whitney AUC by direct pair counting.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Step-wise average precision: for each distinct threshold, from the
/// highest down, add the recall gained there (as an exact count ratio)
/// times the precision at that threshold. Every threshold is counted by a
/// full pass over the scores.
pub fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count();
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for t in thresholds {
        let mut tp = 0;
        let mut predicted = 0;
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                predicted += 1;
                if l {
                    tp += 1;
                }
            }
        }
        if tp > prev_tp {
            ap += ((tp - prev_tp) as f64 / positives as f64) * (tp as f64 / predicted as f64);
        }
        prev_tp = tp;
    }
    ap
}
