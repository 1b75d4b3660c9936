//! One check per acceptance criterion. Each returns a one-line summary on
//! success and a description of the first violation on failure.

use std::collections::BTreeMap;

use cyborg::ablations::{SaliencySubstitute, SubstitutePlan};
use cyborg::datasets::{generate_spurious_dataset, Dataset, SpuriousConfig};
use cyborg::evaluation::{
    average_precision, cam_human_agreement, mean_std, roc_auc, scaling_crossover, Crossover,
};
use cyborg::grid::Grid;
use cyborg::loss::{
    compute_cam, cross_entropy, cyborg_batch_loss, cyborg_batch_loss_with_grad, saliency_distance,
    saliency_distance_with_grad, CamClass, CyborgTerm, DistanceMeasure, MeasureKind,
};
use cyborg::model::{Backbone, ProbeGrad, ToyCnn};
use cyborg::saliency::{fixation_density, fixations_to_heatmap, EyetrackConfig, Fixation};
use cyborg::search::{
    rank_arch, rank_gen, rank_opt, shipped, CellKey, Domain, Preset, SearchGrid, SearchTable,
    PRESET_ARCHITECTURES,
};
use cyborg::training::{train_one, train_repeated, RepeatedRuns, TrainConfig};
use cyborg::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{brute_ap, brute_auc, central_difference, random_grid, random_probe, rel_err};

pub type Check = Result<String, String>;

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

// ---- loss degeneracy ------------------------------------------------------

pub fn alpha_one_equals_cross_entropy(batches: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for b in 0..batches {
        let k = rng.random_range(1..=8);
        let classes = rng.random_range(2..=4);
        let probes: Vec<_> = (0..k)
            .map(|_| random_probe(&mut rng, 3, 7, classes))
            .collect();
        let labels: Vec<usize> = (0..k).map(|_| rng.random_range(0..classes)).collect();
        let maps: Vec<Grid> = (0..k).map(|_| random_grid(&mut rng, 7, 7)).collect();
        let ce = cross_entropy(&probes, &labels).map_err(err)?;
        for kind in MeasureKind::ALL {
            let term = CyborgTerm::new(1.0, kind).map_err(err)?;
            let with: Vec<Option<&Grid>> = maps.iter().map(Some).collect();
            let without = vec![None; k];
            for humans in [&with, &without] {
                let l = cyborg_batch_loss(&probes, humans, &labels, &term).map_err(err)?;
                worst = worst.max((l - ce).abs());
                ensure((l - ce).abs() <= 1e-9, || {
                    format!("batch {b} {kind:?}: |{l} - {ce}| > 1e-9")
                })?;
            }
        }
    }
    Ok(format!("{batches} batches, max |L - CE| = {worst:.1e}"))
}

/// Small dataset without any saliency maps.
pub fn tiny_dataset(size: usize, seed: u64) -> Dataset {
    let mut cfg = SpuriousConfig::new(size, seed);
    cfg.per_class.train = 12;
    cfg.per_class.val = 6;
    cfg.per_class.test = 6;
    let mut ds = generate_spurious_dataset(&cfg).expect("valid config");
    for s in ds.train.iter_mut().chain(&mut ds.val).chain(&mut ds.test) {
        s.saliency = None;
    }
    ds
}

/// Plain SGD on softmax cross-entropy, written without the CYBORG loss.
/// Returns the parameters after every epoch.
pub fn reference_ce_training(model: &ToyCnn, ds: &Dataset, cfg: &TrainConfig) -> Vec<Vec<f64>> {
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut snapshots = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let steps = ((epoch - 1) / cfg.lr_step_epochs) as i32;
        let lr = cfg.lr * cfg.lr_decay.powi(steps);
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; model.params().len()];
            for &i in batch {
                let s = &ds.train[i];
                let (probe, trace) = model.forward(&s.image).unwrap();
                let zmax = probe
                    .logits
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = probe.logits.iter().map(|z| (z - zmax).exp()).collect();
                let total: f64 = exps.iter().sum();
                let mut g = ProbeGrad::zeros_like(&probe);
                for (c, gz) in g.logits.iter_mut().enumerate() {
                    let target = if c == s.label.index() { 1.0 } else { 0.0 };
                    *gz = (exps[c] / total - target) / batch.len() as f64;
                }
                model.backward(&trace, &g, &mut grad);
            }
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
        snapshots.push(model.params().to_vec());
    }
    snapshots
}

pub fn alpha_one_training_matches_reference() -> Check {
    let ds = tiny_dataset(16, 21);
    let cfg = TrainConfig {
        term: CyborgTerm::new(1.0, MeasureKind::Ssim).map_err(err)?,
        lr: 0.05,
        lr_step_epochs: 2,
        max_epochs: 4,
        batch_size: 5,
        seed: 9,
        runs: 1,
        ..TrainConfig::default()
    };
    let init = ToyCnn::new(4, 16, 2).map_err(err)?;
    let run = train_one(&cfg, &ds, init.clone()).map_err(err)?;
    let snapshots = reference_ce_training(&init, &ds, &cfg);
    let expected = &snapshots[run.result.best_epoch - 1];
    let moved = init.params().iter().zip(expected).any(|(a, b)| a != b);
    ensure(moved, || {
        "reference training did not change the parameters".into()
    })?;
    let diff = run
        .best_model
        .params()
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(diff <= 1e-9, || {
        format!("max parameter difference {diff:.3e} > 1e-9")
    })?;
    Ok(format!(
        "{} params at epoch {}, max diff {diff:.1e}",
        expected.len(),
        run.result.best_epoch
    ))
}

pub fn loss_degeneracy() -> Check {
    let a = alpha_one_equals_cross_entropy(100)?;
    let b = alpha_one_training_matches_reference()?;
    Ok(format!("{a}; training run {b}"))
}

// ---- gradients ------------------------------------------------------------

pub fn distance_gradients(pairs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for trial in 0..pairs {
        let a = random_grid(&mut rng, 7, 7);
        let b = random_grid(&mut rng, 7, 7);
        for kind in MeasureKind::ALL {
            let m = DistanceMeasure::new(kind);
            let (_, g) = saliency_distance_with_grad(&a, &b, &m, true).map_err(err)?;
            let g = g.ok_or("gradient not returned")?;
            for i in 0..a.len() {
                let numeric = central_difference(
                    |v| {
                        let mut p = a.clone();
                        p.as_mut_slice()[i] = v;
                        saliency_distance(&p, &b, &m).unwrap()
                    },
                    a.as_slice()[i],
                    FD_STEP,
                );
                let e = rel_err(g.as_slice()[i], numeric);
                worst = worst.max(e);
                ensure(e <= FD_TOL, || {
                    format!("pair {trial} {kind:?} pixel {i}: rel err {e:.2e}")
                })?;
            }
        }
    }
    Ok(format!(
        "{pairs} pairs x 5 measures, worst rel err {worst:.1e}"
    ))
}

/// compute_cam against finite differences in every weight, and the full CAM
/// path (normalization, distance, blend) in feature maps, weights and logits.
pub fn cam_gradients(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let probe = random_probe(&mut rng, 3, 7, 2);
        let class = rng.random_range(0..2);
        let cam = compute_cam(&probe, class).map_err(err)?;
        for n in 0..3 {
            for i in 0..cam.len() {
                let numeric = central_difference(
                    |v| {
                        let mut p = probe.clone();
                        p.class_weights[class][n] = v;
                        compute_cam(&p, class).unwrap().as_slice()[i]
                    },
                    probe.class_weights[class][n],
                    FD_STEP,
                );
                let e = rel_err(probe.feature_maps[n].as_slice()[i], numeric);
                worst = worst.max(e);
                ensure(e <= FD_TOL, || {
                    format!("trial {trial}: dCAM/dw rel err {e:.2e}")
                })?;
            }
        }

        let human = random_grid(&mut rng, 7, 7);
        let label = rng.random_range(0..2);
        for kind in MeasureKind::ALL {
            let term = CyborgTerm::new(0.3, kind).map_err(err)?;
            let loss = |p: &cyborg::model::ModelProbe| {
                cyborg_batch_loss(std::slice::from_ref(p), &[Some(&human)], &[label], &term)
                    .unwrap()
            };
            let (_, g) = cyborg_batch_loss_with_grad(
                std::slice::from_ref(&probe),
                &[Some(&human)],
                &[label],
                &term,
                true,
            )
            .map_err(err)?;
            let g = &g.ok_or("gradient not returned")?[0];
            let mut check = |analytic: f64, numeric: f64, what: &str| {
                let e = rel_err(analytic, numeric);
                worst = worst.max(e);
                ensure(e <= FD_TOL, || {
                    format!("trial {trial} {kind:?} {what}: rel err {e:.2e}")
                })
            };
            for n in 0..3 {
                for i in 0..49 {
                    let numeric = central_difference(
                        |v| {
                            let mut p = probe.clone();
                            p.feature_maps[n].as_mut_slice()[i] = v;
                            loss(&p)
                        },
                        probe.feature_maps[n].as_slice()[i],
                        FD_STEP,
                    );
                    check(g.feature_maps[n].as_slice()[i], numeric, "feature map")?;
                }
                for c in 0..2 {
                    let numeric = central_difference(
                        |v| {
                            let mut p = probe.clone();
                            p.class_weights[c][n] = v;
                            loss(&p)
                        },
                        probe.class_weights[c][n],
                        FD_STEP,
                    );
                    check(g.class_weights[c][n], numeric, "class weight")?;
                }
            }
            for c in 0..2 {
                let numeric = central_difference(
                    |v| {
                        let mut p = probe.clone();
                        p.logits[c] = v;
                        loss(&p)
                    },
                    probe.logits[c],
                    FD_STEP,
                );
                check(g.logits[c], numeric, "logit")?;
            }
        }
    }
    Ok(format!("{trials} probes, worst rel err {worst:.1e}"))
}

pub fn gradient_suite() -> Check {
    let a = distance_gradients(200)?;
    let b = cam_gradients(200)?;
    Ok(format!("distances: {a}; CAM path: {b}"))
}

// ---- metric oracles -------------------------------------------------------

/// Random scores with both classes present; every other instance draws
/// scores from a handful of levels so ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=100);
    let tied = rng.random_bool(0.5);
    let levels = rng.random_range(1..=5);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    labels.shuffle(rng);
    let scores = (0..n)
        .map(|_| {
            if tied {
                rng.random_range(0..levels) as f64 / levels as f64
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    (scores, labels)
}

pub fn metric_oracles(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut with_ties = 0;
    for i in 0..instances {
        let (scores, labels) = random_instance(&mut rng);
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            with_ties += 1;
        }
        let auc = roc_auc(&scores, &labels).map_err(err)?;
        let ap = average_precision(&scores, &labels).map_err(err)?;
        let (oa, op) = (brute_auc(&scores, &labels), brute_ap(&scores, &labels));
        ensure(auc == oa, || {
            format!("instance {i}: auc {auc} vs oracle {oa}")
        })?;
        ensure(ap == op, || format!("instance {i}: ap {ap} vs oracle {op}"))?;
    }
    Ok(format!(
        "{instances} instances ({with_ties} with ties), exact agreement"
    ))
}

// ---- ranking --------------------------------------------------------------

/// Rank points from scratch: one plus the number of cells that beat this
/// one, where a cell beats another on higher AUC, then lower α, then the
/// measure order.
pub fn oracle_points(table: &SearchTable) -> BTreeMap<CellKey, usize> {
    let cells: Vec<(CellKey, f64)> = table
        .cells
        .iter()
        .map(|(k, s)| (*k, s.mean_val_auc))
        .collect();
    let beats = |a: &(CellKey, f64), b: &(CellKey, f64)| {
        a.1 > b.1 || (a.1 == b.1 && (a.0.alpha, a.0.measure) < (b.0.alpha, b.0.measure))
    };
    cells
        .iter()
        .map(|c| (c.0, 1 + cells.iter().filter(|d| beats(d, c)).count()))
        .collect()
}

/// Exhaustive minimum of summed oracle points, ties to the earliest cell.
pub fn oracle_winner(tables: &[&SearchTable]) -> CellKey {
    let mut sums: Vec<(CellKey, usize)> = Vec::new();
    for key in tables[0].cells.keys() {
        let s = tables.iter().map(|t| oracle_points(t)[key]).sum();
        sums.push((*key, s));
    }
    let mut best = sums[0];
    for &(k, s) in &sums {
        if s < best.1 || (s == best.1 && (k.alpha, k.measure) < (best.0.alpha, best.0.measure)) {
            best = (k, s);
        }
    }
    best.0
}

fn cell(p: &Preset) -> CellKey {
    CellKey::new(p.alpha, p.measure)
}

pub const DOMAINS: [Domain; 3] = [Domain::Face, Domain::Iris, Domain::Cxr];

/// Full-grid tables for every architecture × domain, built so each table's
/// top cells are its opt preset, then its architecture preset, then the
/// general preset, and every other published cell sits at the bottom.
pub fn published_tables(seed: u64) -> Vec<SearchTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = SearchGrid::full();
    let published: Vec<CellKey> = PRESET_ARCHITECTURES
        .iter()
        .flat_map(|&a| {
            let mut v = vec![cell(&shipped::arch(a).unwrap())];
            v.extend(DOMAINS.iter().map(|&d| cell(&shipped::opt(a, d).unwrap())));
            v
        })
        .chain([cell(&shipped::gen())])
        .collect();
    let mut tables = Vec::new();
    for &arch in &PRESET_ARCHITECTURES {
        for &domain in &DOMAINS {
            let mut top = Vec::new();
            for c in [
                cell(&shipped::opt(arch, domain).unwrap()),
                cell(&shipped::arch(arch).unwrap()),
                cell(&shipped::gen()),
            ] {
                if !top.contains(&c) {
                    top.push(c);
                }
            }
            let mut middle: Vec<CellKey> = grid
                .cells()
                .into_iter()
                .filter(|c| !top.contains(c) && !published.contains(c))
                .collect();
            middle.shuffle(&mut rng);
            let mut bottom: Vec<CellKey> = published
                .iter()
                .filter(|c| !top.contains(c))
                .copied()
                .collect();
            bottom.sort();
            bottom.dedup();
            bottom.shuffle(&mut rng);
            let mut t = SearchTable::new(arch.id(), domain.id());
            for (pos, c) in top.iter().chain(&middle).chain(&bottom).enumerate() {
                t.insert(c.alpha(), c.measure, &[0.99 - 0.005 * pos as f64]);
            }
            tables.push(t);
        }
    }
    tables
}

pub fn ranking_reproduction() -> Check {
    let tables = published_tables(41);
    let all: Vec<&SearchTable> = tables.iter().collect();

    let gen = rank_gen(&tables).map_err(err)?;
    let want = cell(&shipped::gen());
    ensure(oracle_winner(&all) == want, || {
        "oracle disagrees with the constructed gen winner".into()
    })?;
    ensure(cell(&gen) == want, || {
        format!("rank_gen gave {} / {}", gen.measure, gen.alpha)
    })?;

    for &arch in &PRESET_ARCHITECTURES {
        let own: Vec<SearchTable> = tables
            .iter()
            .filter(|t| t.architecture == arch.id())
            .cloned()
            .collect();
        let refs: Vec<&SearchTable> = own.iter().collect();
        let got = rank_arch(&own).map_err(err)?;
        let want = cell(&shipped::arch(arch).unwrap());
        ensure(oracle_winner(&refs) == want, || {
            format!("{arch}: oracle disagrees with construction")
        })?;
        ensure(cell(&got) == want, || {
            format!("{arch}: rank_arch gave {} / {}", got.measure, got.alpha)
        })?;
        for t in &own {
            let opt = rank_opt(t).map_err(err)?;
            ensure(cell(&opt) == oracle_winner(&[t]), || {
                format!("{arch}/{}: rank_opt disagrees", t.domain)
            })?;
        }
    }
    Ok(format!(
        "gen = {} / {}, 3 arch presets and 9 opt winners match the exhaustive oracle on {}-cell tables",
        gen.measure,
        gen.alpha,
        SearchGrid::full().cells().len()
    ))
}

// ---- scaling crossover ----------------------------------------------------

pub fn scaling_crossover_cases() -> Check {
    let series = [(1.0, 0.80), (2.0, 0.90)];
    let got = scaling_crossover(0.85, &series).map_err(err)?;
    ensure(got == Crossover::At(1.5), || {
        format!("target 0.85 gave {got:?}")
    })?;
    let above = scaling_crossover(0.95, &series).map_err(err)?;
    ensure(above == Crossover::NotReached, || {
        format!("target 0.95 gave {above:?}")
    })?;
    Ok("{1x: 0.80, 2x: 0.90} target 0.85 -> 1.5; target 0.95 -> not reached".into())
}

// ---- eye tracking ---------------------------------------------------------

pub fn eye_tracking() -> Check {
    let cfg = EyetrackConfig::new(2.0).map_err(err)?;
    let single = [Fixation {
        x: 10.0,
        y: 7.0,
        duration_ms: 200.0,
    }];
    let map = fixations_to_heatmap(&single, 32, 24, &cfg).map_err(err)?;
    let peak = map.values().argmax();
    ensure(peak == (10, 7), || format!("peak at {peak:?}"))?;
    ensure(map.values().get(10, 7) == 1.0, || {
        format!("peak value {}", map.values().get(10, 7))
    })?;

    let pair = [
        Fixation {
            x: 5.0,
            y: 5.0,
            duration_ms: 300.0,
        },
        Fixation {
            x: 25.0,
            y: 18.0,
            duration_ms: 150.0,
        },
    ];
    let density = fixation_density(&pair, 32, 24, &cfg).map_err(err)?;
    let ratio = density.get(5, 5) / density.get(25, 18);
    ensure((ratio - 2.0).abs() <= 1e-6, || {
        format!("peak ratio {ratio}")
    })?;

    let mut with_short = pair.to_vec();
    with_short.push(Fixation {
        x: 15.0,
        y: 12.0,
        duration_ms: 149.0,
    });
    let filtered = fixation_density(&with_short, 32, 24, &cfg).map_err(err)?;
    ensure(filtered == density, || {
        "a 149 ms fixation changed the density".into()
    })?;
    let short_only = [Fixation {
        x: 15.0,
        y: 12.0,
        duration_ms: 149.9,
    }];
    ensure(
        matches!(
            fixation_density(&short_only, 32, 24, &cfg),
            Err(Error::NoSurvivingFixations { .. })
        ),
        || "short-only fixation list was not rejected".into(),
    )?;
    Ok(format!(
        "single peak 1.0 at fixation, 300/150 ms ratio {ratio:.9}, sub-150 ms dropped"
    ))
}

// ---- spurious benchmark and ablation ---------------------------------------

pub const BENCHMARK_RUNS: usize = 5;
pub const BENCHMARK_MARGIN: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct Arm {
    pub name: &'static str,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub cam_l1: f64,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} AUC {:.3} ± {:.3}, CAM L1 {:.3}",
            self.name, self.mean_auc, self.std_auc, self.cam_l1
        )
    }
}

pub fn benchmark_dataset() -> Dataset {
    let cfg = SpuriousConfig::new(64, 0);
    debug_assert_eq!((cfg.train_rho, cfg.test_rho), (1.0, 0.0));
    generate_spurious_dataset(&cfg).expect("valid config")
}

pub fn run_arm(
    name: &'static str,
    ds: &Dataset,
    term: CyborgTerm,
    source: SaliencySubstitute,
) -> cyborg::Result<Arm> {
    let cfg = TrainConfig {
        term,
        saliency: SubstitutePlan::new(source),
        runs: BENCHMARK_RUNS,
        ..TrainConfig::desk_scale()
    };
    let rep: RepeatedRuns<ToyCnn> = train_repeated(&cfg, ds, |s| ToyCnn::new(s, 64, 2))?;
    let l1 = rep
        .runs
        .iter()
        .map(|r| {
            cam_human_agreement(&r.best_model, &ds.test, CamClass::TrueLabel)
                .map(|m| m[&MeasureKind::L1])
        })
        .collect::<cyborg::Result<Vec<_>>>()?;
    Ok(Arm {
        name,
        mean_auc: rep.summary.mean_auc,
        std_auc: rep.summary.std_auc,
        cam_l1: mean_std(&l1).0,
    })
}

pub fn spurious_benchmark(traditional: &Arm, cyborg: &Arm) -> Check {
    let gap = cyborg.mean_auc - traditional.mean_auc;
    let summary = format!("{cyborg}; {traditional}; gap {gap:+.3}");
    ensure(gap >= BENCHMARK_MARGIN, || {
        format!("{summary} < +{BENCHMARK_MARGIN}")
    })?;
    ensure(cyborg.cam_l1 < traditional.cam_l1, || {
        format!("{summary}; CAM L1 not lower")
    })?;
    Ok(summary)
}

pub fn ablation_direction(traditional: &Arm, inverted: &Arm) -> Check {
    let summary = format!("{inverted}; {traditional}");
    ensure(inverted.mean_auc <= traditional.mean_auc, || {
        format!("{summary}: inverted above traditional")
    })?;
    Ok(summary)
}
