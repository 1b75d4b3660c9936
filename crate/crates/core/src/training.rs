//! Deterministic minibatch SGD with a stepped learning-rate schedule,
//! best-epoch selection on the validation split, and repeated runs for error
//! statistics.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ablations::SubstitutePlan;
use crate::datasets::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, average_precision, mean_std, positive_score, roc_auc};
use crate::grid::{CropBox, Grid};
use crate::loss::{cyborg_batch_loss_with_grad, CyborgTerm};
use crate::manifest::Label;
use crate::model::{Backbone, ModelProbe};
use crate::saliency::align_heatmap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    ValAccuracy,
    ValAuc,
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::ValAccuracy => "val_accuracy",
            SelectionMetric::ValAuc => "val_auc",
        })
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "val_accuracy" | "val_acc" => Ok(SelectionMetric::ValAccuracy),
            "val_auc" => Ok(SelectionMetric::ValAuc),
            other => Err(Error::ConfigInvalid(format!(
                "unknown selection metric {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub term: CyborgTerm,
    pub lr: f64,
    /// Multiplies the learning rate every `lr_step_epochs` epochs.
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub selection: SelectionMetric,
    pub runs: usize,
    pub saliency: SubstitutePlan,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            term: CyborgTerm::traditional(),
            lr: 0.005,
            lr_decay: 0.1,
            lr_step_epochs: 12,
            max_epochs: 50,
            batch_size: 20,
            seed: 0,
            selection: SelectionMetric::ValAccuracy,
            runs: 10,
            saliency: SubstitutePlan::default(),
        }
    }
}

impl TrainConfig {
    /// Schedule used for the toy CNN on the synthetic benchmark: the same
    /// stepped decay with a larger base rate and a shorter horizon, since the
    /// rate is effectively frozen after the second decay.
    pub fn desk_scale() -> Self {
        Self {
            lr: 0.1,
            max_epochs: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.term.validate()?;
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if !(self.lr_decay > 0.0) || self.lr_step_epochs == 0 {
            return bad("lr decay must be positive with a nonzero step".into());
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.runs == 0 {
            return bad("max_epochs, batch_size and runs must be at least 1".into());
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let steps = (epoch.saturating_sub(1) / self.lr_step_epochs) as i32;
        self.lr * self.lr_decay.powi(steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_auc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestScore {
    pub image: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub curves: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_metric: f64,
    pub best_checkpoint: Option<PathBuf>,
    pub test_scores: Vec<TestScore>,
    pub test_auc: Option<f64>,
    pub test_ap: Option<f64>,
}

impl RunResult {
    pub fn best_record(&self) -> &EpochRecord {
        &self.curves[self.best_epoch - 1]
    }
}

pub struct TrainedRun<B> {
    pub result: RunResult,
    pub best_model: B,
}

/// A training sample with its saliency already on the CAM grid.
struct Prepared<'a> {
    sample: &'a Sample,
    human: Option<Grid>,
}

fn prepare_train<'a>(
    samples: &'a [Sample],
    plan: &SubstitutePlan,
    cam_dims: (usize, usize),
    need_saliency: bool,
) -> Result<Vec<Prepared<'a>>> {
    let (w, h) = cam_dims;
    samples
        .iter()
        .map(|s| {
            if !need_saliency {
                return Ok(Prepared {
                    sample: s,
                    human: None,
                });
            }
            let aligned = s
                .saliency
                .as_ref()
                .map(|m| align_heatmap(m, &CropBox::full(m.values()), w, h))
                .transpose()?;
            let map = plan
                .apply(&s.id, aligned.as_ref(), w, h)?
                .ok_or_else(|| Error::MissingSaliency(s.id.clone()))?;
            Ok(Prepared {
                sample: s,
                human: Some(map.into_values()),
            })
        })
        .collect()
}

/// Epoch-level shuffle order; one generator per run, advanced every epoch.
pub fn shuffled_order(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

pub fn sgd_step<B: Backbone>(model: &mut B, grad: &[f64], lr: f64) {
    for (p, g) in model.params_mut().iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

/// Probes, accuracy and (when both classes are present) AUC on a split.
pub fn evaluate_split<B: Backbone>(
    model: &B,
    samples: &[Sample],
) -> Result<(Vec<ModelProbe>, f64, f64)> {
    let probes = samples
        .iter()
        .map(|s| model.forward(&s.image).map(|(p, _)| p))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let acc = accuracy(&probes, &labels);
    let scores: Vec<f64> = probes.iter().map(positive_score).collect();
    let positives: Vec<bool> = samples.iter().map(|s| s.label.is_positive()).collect();
    let auc = roc_auc(&scores, &positives).unwrap_or(f64::NAN);
    Ok((probes, acc, auc))
}

fn cam_dims<B: Backbone>(model: &B, sample: &Sample) -> Result<(usize, usize)> {
    let (probe, _) = model.forward(&sample.image)?;
    Ok(probe.map_dims())
}

/// Trains one model. Ties in the selection metric keep the earliest epoch.
pub fn train_one<B: Backbone + Clone>(
    config: &TrainConfig,
    dataset: &Dataset,
    model: B,
) -> Result<TrainedRun<B>> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptySplit("training split is empty".into()));
    }
    if dataset.val.is_empty() {
        return Err(Error::EmptySplit("validation split is empty".into()));
    }
    let mut model = model;
    let dims = cam_dims(&model, &dataset.train[0])?;
    let prepared = prepare_train(
        &dataset.train,
        &config.saliency,
        dims,
        config.term.uses_saliency(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grad = vec![0.0; model.params().len()];
    let mut curves = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, B)> = None;

    for epoch in 1..=config.max_epochs {
        let lr = config.lr_at_epoch(epoch);
        let order = shuffled_order(&mut rng, prepared.len());
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut probes = Vec::with_capacity(batch.len());
            let mut traces = Vec::with_capacity(batch.len());
            for &i in batch {
                let (p, t) = model.forward(&prepared[i].sample.image)?;
                probes.push(p);
                traces.push(t);
            }
            let labels: Vec<usize> = batch
                .iter()
                .map(|&i| prepared[i].sample.label.index())
                .collect();
            let humans: Vec<Option<&Grid>> =
                batch.iter().map(|&i| prepared[i].human.as_ref()).collect();
            let (loss, grads) =
                cyborg_batch_loss_with_grad(&probes, &humans, &labels, &config.term, true)?;
            loss_sum += loss * batch.len() as f64;
            correct += probes
                .iter()
                .zip(&labels)
                .filter(|(p, &y)| p.predicted_class() == y)
                .count();
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (trace, g) in traces.iter().zip(grads.expect("gradients requested")) {
                model.backward(trace, &g, &mut grad);
            }
            sgd_step(&mut model, &grad, lr);
        }

        let (_, val_acc, val_auc) = evaluate_split(&model, &dataset.val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / prepared.len() as f64,
            train_acc: correct as f64 / prepared.len() as f64,
            val_acc,
            val_auc,
            lr,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} train_acc {:.3} val_acc {:.3} val_auc {:.3}",
            record.train_loss,
            record.train_acc,
            val_acc,
            val_auc
        );
        let metric = match config.selection {
            SelectionMetric::ValAccuracy => val_acc,
            SelectionMetric::ValAuc => val_auc,
        };
        let metric = if metric.is_nan() {
            f64::NEG_INFINITY
        } else {
            metric
        };
        if best.as_ref().map_or(true, |(_, m, _)| metric > *m) {
            best = Some((epoch, metric, model.clone()));
        }
        curves.push(record);
    }

    let (best_epoch, best_metric, best_model) = best.expect("at least one epoch");
    let (test_scores, test_auc, test_ap) = score_split(&best_model, &dataset.test)?;
    Ok(TrainedRun {
        result: RunResult {
            seed: config.seed,
            curves,
            best_epoch,
            best_metric,
            best_checkpoint: None,
            test_scores,
            test_auc,
            test_ap,
        },
        best_model,
    })
}

/// Per-sample atypical-class probabilities with AUC and AP where defined.
pub fn score_split<B: Backbone>(
    model: &B,
    samples: &[Sample],
) -> Result<(Vec<TestScore>, Option<f64>, Option<f64>)> {
    let mut scores = Vec::with_capacity(samples.len());
    for s in samples {
        let (p, _) = model.forward(&s.image)?;
        scores.push(TestScore {
            image: s.id.clone(),
            label: s.label,
            score: positive_score(&p),
        });
    }
    let values: Vec<f64> = scores.iter().map(|t| t.score).collect();
    let positives: Vec<bool> = scores.iter().map(|t| t.label.is_positive()).collect();
    let auc = roc_auc(&values, &positives).ok();
    let ap = average_precision(&values, &positives).ok();
    Ok((scores, auc, ap))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_ap: f64,
    pub std_ap: f64,
}

pub fn summarize(results: &[RunResult]) -> RunSummary {
    let aucs: Vec<f64> = results.iter().filter_map(|r| r.test_auc).collect();
    let aps: Vec<f64> = results.iter().filter_map(|r| r.test_ap).collect();
    let (mean_auc, std_auc) = mean_std(&aucs);
    let (mean_ap, std_ap) = mean_std(&aps);
    RunSummary {
        runs: results.len(),
        mean_auc,
        std_auc,
        mean_ap,
        std_ap,
    }
}

pub struct RepeatedRuns<B> {
    pub runs: Vec<TrainedRun<B>>,
    pub summary: RunSummary,
}

/// Trains `config.runs` independent models; run `i` uses seed
/// `config.seed + i` for both initialization and shuffling.
pub fn train_repeated<B, F>(
    config: &TrainConfig,
    dataset: &Dataset,
    model_factory: F,
) -> Result<RepeatedRuns<B>>
where
    B: Backbone + Clone,
    F: Fn(u64) -> Result<B>,
{
    config.validate()?;
    let mut runs = Vec::with_capacity(config.runs);
    for i in 0..config.runs {
        let seed = config.seed.wrapping_add(i as u64);
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        runs.push(train_one(&cfg, dataset, model_factory(seed)?)?);
    }
    let results: Vec<RunResult> = runs.iter().map(|r| r.result.clone()).collect();
    Ok(RepeatedRuns {
        summary: summarize(&results),
        runs,
    })
}

pub fn write_curves_csv(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_acc", "val_acc", "val_auc", "lr"])?;
    for r in &result.curves {
        w.write_record([
            r.epoch.to_string(),
            r.train_acc.to_string(),
            r.val_acc.to_string(),
            r.val_auc.to_string(),
            r.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_test_scores_csv(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image", "label", "score"])?;
    for t in &result.test_scores {
        w.write_record([t.image.clone(), t.label.to_string(), t.score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps every `k`-th sample of each class. Class proportions are preserved
/// within one sample per class.
pub fn subsample_stratified(samples: &[Sample], fraction: f64) -> Vec<Sample> {
    let mut out = Vec::new();
    for label in [Label::Typical, Label::Atypical] {
        let class: Vec<&Sample> = samples.iter().filter(|s| s.label == label).collect();
        let keep = (class.len() as f64 * fraction).round() as usize;
        for j in 0..keep {
            out.push(class[j * class.len() / keep.max(1)].clone());
        }
    }
    out
}
