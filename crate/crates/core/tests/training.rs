mod common;

use common::criteria::tiny_dataset;
use cyborg::ablations::{SaliencySubstitute, SubstitutePlan};
use cyborg::datasets::{class_counts, generate_spurious_dataset, SpuriousConfig};
use cyborg::grid::Grid;
use cyborg::loss::{CyborgTerm, MeasureKind};
use cyborg::model::{Backbone, ToyCnn};
use cyborg::saliency::SaliencyMap;
use cyborg::training::{
    subsample_stratified, train_one, train_repeated, SelectionMetric, TrainConfig,
};
use proptest::prelude::*;

fn quick(term: CyborgTerm, epochs: usize) -> TrainConfig {
    TrainConfig {
        term,
        lr: 0.05,
        max_epochs: epochs,
        batch_size: 6,
        runs: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn repeated_runs_use_distinct_seeds_and_summarize_within_range() {
    let ds = tiny_dataset(16, 2);
    let rep = train_repeated(&quick(CyborgTerm::traditional(), 2), &ds, |s| {
        ToyCnn::new(s, 16, 2)
    })
    .unwrap();
    assert_eq!(rep.runs.len(), 3);
    let seeds: Vec<u64> = rep.runs.iter().map(|r| r.result.seed).collect();
    assert_eq!(seeds, [0, 1, 2]);
    assert_ne!(
        rep.runs[0].best_model.params(),
        rep.runs[1].best_model.params()
    );
    let aucs: Vec<f64> = rep
        .runs
        .iter()
        .map(|r| r.result.test_auc.unwrap())
        .collect();
    let (lo, hi) = aucs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    assert!(lo <= rep.summary.mean_auc && rep.summary.mean_auc <= hi);
}

#[test]
fn substitutes_train_without_code_changes() {
    let mut cfg = SpuriousConfig::new(16, 6);
    cfg.per_class.train = 6;
    cfg.per_class.val = 3;
    cfg.per_class.test = 3;
    let ds = generate_spurious_dataset(&cfg).unwrap();
    for source in [
        SaliencySubstitute::Human,
        SaliencySubstitute::Inverted,
        SaliencySubstitute::Mask,
        SaliencySubstitute::Noise,
        SaliencySubstitute::Gaussian,
    ] {
        let config = TrainConfig {
            saliency: SubstitutePlan::new(source),
            runs: 1,
            ..quick(CyborgTerm::new(0.5, MeasureKind::SsimL1).unwrap(), 1)
        };
        let run = train_one(&config, &ds, ToyCnn::new(1, 16, 2).unwrap()).unwrap();
        assert_eq!(run.result.curves.len(), 1, "{source}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn best_epoch_holds_the_curve_maximum(seed in 0u64..1000, auc in any::<bool>()) {
        let ds = tiny_dataset(16, seed);
        let config = TrainConfig {
            seed,
            selection: if auc { SelectionMetric::ValAuc } else { SelectionMetric::ValAccuracy },
            ..quick(CyborgTerm::new(0.75, MeasureKind::Ssim).unwrap(), 4)
        };
        let mut ds = ds;
        let gt = Grid::filled(16, 16, 0.5);
        for s in &mut ds.train {
            s.saliency = Some(SaliencyMap::clamped(gt.clone(), cyborg::saliency::SaliencySource::Annotation));
        }
        let run = train_one(&config, &ds, ToyCnn::new(seed, 16, 2).unwrap()).unwrap().result;
        prop_assert_eq!(run.curves.len(), 4);
        let metric = |e: &cyborg::training::EpochRecord| if auc { e.val_auc } else { e.val_acc };
        let max = run.curves.iter().map(metric).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(run.best_metric, max);
        let first = run.curves.iter().position(|e| metric(e) == max).unwrap() + 1;
        prop_assert_eq!(run.best_epoch, first);
    }

    #[test]
    fn subsampling_keeps_class_proportions(t in 1usize..30, a in 1usize..30, fraction in 0.05..1.0f64) {
        let mut cfg = SpuriousConfig::new(8, 0);
        cfg.per_class.train = t.max(a);
        let ds = generate_spurious_dataset(&cfg).unwrap();
        let typical = ds.train.iter().filter(|s| s.label.index() == 0).take(t);
        let atypical = ds.train.iter().filter(|s| s.label.index() == 1).take(a);
        let samples: Vec<_> = typical.chain(atypical).cloned().collect();
        let sub = subsample_stratified(&samples, fraction);
        let [st, sa] = class_counts(&sub);
        prop_assert!((st as f64 - t as f64 * fraction).abs() <= 1.0);
        prop_assert!((sa as f64 - a as f64 * fraction).abs() <= 1.0);
    }
}
