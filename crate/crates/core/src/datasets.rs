//! In-memory datasets, their on-disk manifest form, and a synthetic
//! generator with a plantable shortcut.
//!
//! Synthetic images carry the class signal as an oriented stripe texture
//! inside a salient rectangle (horizontal for typical, vertical for
//! atypical). A bright square marker in a corner agrees with the label at a
//! configurable rate, giving traditional training an easy shortcut that does
//! not transfer to a test split where the marker is label-independent.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ablations::sample_seed;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io;
use crate::manifest::{self, Label, ManifestOptions, ManifestRecord, ManifestRow, Split};
use crate::saliency::{
    fixations_to_heatmap, load_fixation_log, EyetrackConfig, SaliencyMap, SaliencySource,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Unique identifier, also the file stem when written to disk.
    pub id: String,
    pub image: Grid,
    pub label: Label,
    /// Human saliency at image resolution.
    pub saliency: Option<SaliencyMap>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Sample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .next()
            .map(|s| s.image.dims())
    }

    /// Loads every image (and saliency map, where given) named by a manifest.
    pub fn from_manifest(records: &[ManifestRecord]) -> Result<Self> {
        let mut ds = Dataset::default();
        for r in records {
            let image = io::load_gray_png(&r.image)?;
            let saliency = r
                .saliency
                .as_ref()
                .map(|p| {
                    io::load_gray_png(p).and_then(|g| {
                        if g.dims() != image.dims() {
                            return Err(Error::shape(
                                format!(
                                    "{}x{} saliency for {}",
                                    image.width(),
                                    image.height(),
                                    r.image.display()
                                ),
                                format!("{}x{}", g.width(), g.height()),
                            ));
                        }
                        SaliencyMap::new(g, SaliencySource::Annotation)
                    })
                })
                .transpose()?;
            let id = r
                .image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| r.image.display().to_string());
            ds.split_mut(r.split).push(Sample {
                id,
                image,
                label: r.label,
                saliency,
            });
        }
        Ok(ds)
    }

    pub fn load(manifest_path: &Path, opts: ManifestOptions) -> Result<Self> {
        Self::from_manifest(&manifest::load_manifest(manifest_path, opts)?)
    }

    /// Replaces training saliency with eye-tracking heatmaps read from
    /// `<dir>/<id>.csv`. Samples whose fixations are all filtered out are
    /// dropped with a warning; their ids are returned.
    pub fn attach_fixations(&mut self, dir: &Path, cfg: &EyetrackConfig) -> Result<Vec<String>> {
        let mut dropped = Vec::new();
        let mut kept = Vec::with_capacity(self.train.len());
        for mut s in std::mem::take(&mut self.train) {
            let fixations = load_fixation_log(&dir.join(format!("{}.csv", s.id)))?;
            match fixations_to_heatmap(&fixations, s.image.width(), s.image.height(), cfg) {
                Ok(map) => {
                    s.saliency = Some(map);
                    kept.push(s);
                }
                Err(Error::NoSurvivingFixations {
                    total,
                    min_duration_ms,
                }) => {
                    log::warn!(
                        "dropping {}: none of {total} fixations last {min_duration_ms} ms or more",
                        s.id
                    );
                    dropped.push(s.id);
                }
                Err(e) => return Err(e),
            }
        }
        self.train = kept;
        Ok(dropped)
    }

    /// Writes `images/<id>.png`, `saliency/<id>.png` and `manifest.csv`
    /// under `dir`, returning the manifest path.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("saliency"))?;
        let mut rows = Vec::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            for s in self.split(split) {
                let image = format!("images/{}.png", s.id);
                io::save_gray_png(&s.image, &dir.join(&image))?;
                let saliency = match &s.saliency {
                    Some(m) => {
                        let rel = format!("saliency/{}.png", s.id);
                        io::save_gray_png(m.values(), &dir.join(&rel))?;
                        Some(rel)
                    }
                    None => None,
                };
                rows.push(ManifestRow {
                    image,
                    label: s.label,
                    saliency,
                    split,
                });
            }
        }
        let path = dir.join("manifest.csv");
        manifest::write_manifest(&rows, fs::File::create(&path)?)?;
        Ok(path)
    }
}

pub fn class_counts(samples: &[Sample]) -> [usize; 2] {
    let mut c = [0, 0];
    for s in samples {
        c[s.label.index()] += 1;
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }

    fn fits(&self, size: usize) -> bool {
        self.width > 0
            && self.height > 0
            && self.x + self.width <= size
            && self.y + self.height <= size
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpuriousConfig {
    pub image_size: usize,
    /// Samples per class in each split.
    pub per_class: SplitSizes,
    pub salient: Rect,
    pub marker: Rect,
    /// Probability that the marker state equals the label in train and val.
    pub train_rho: f64,
    pub test_rho: f64,
    pub noise: f64,
    pub texture_contrast: f64,
    pub texture_period: f64,
    /// Contrast of label-independent stripes of random orientation drawn
    /// outside the salient region.
    pub background_contrast: f64,
    pub marker_value: f64,
    /// Standard deviation of the ground-truth smoothing kernel, in pixels.
    pub saliency_sigma: f64,
    pub seed: u64,
}

impl SpuriousConfig {
    /// Salient region is the centered half of the image; the marker sits in
    /// the top-left corner, out of reach of the smoothed ground truth.
    pub fn new(image_size: usize, seed: u64) -> Self {
        let half = image_size / 2;
        let (origin, marker) = if image_size >= 64 {
            (1, image_size / 10)
        } else {
            (0, 2)
        };
        Self {
            image_size,
            per_class: SplitSizes {
                train: 100,
                val: 50,
                test: 100,
            },
            salient: Rect {
                x: image_size / 4,
                y: image_size / 4,
                width: half,
                height: half,
            },
            marker: Rect {
                x: origin,
                y: origin,
                width: marker,
                height: marker,
            },
            train_rho: 1.0,
            test_rho: 0.0,
            noise: 0.1,
            texture_contrast: 0.08,
            texture_period: 4.0,
            background_contrast: 0.02,
            marker_value: 1.0,
            saliency_sigma: 2.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::ConfigInvalid(m));
        if self.image_size == 0 {
            return err("image size must be positive".into());
        }
        if self.per_class.train == 0 || self.per_class.val == 0 || self.per_class.test == 0 {
            return err(format!(
                "every split needs samples, got {:?}",
                self.per_class
            ));
        }
        if !self.salient.fits(self.image_size) || !self.marker.fits(self.image_size) {
            return err("salient region and marker must lie inside the image".into());
        }
        if self.salient.intersects(&self.marker) {
            return err("salient region and marker overlap".into());
        }
        for (name, rho) in [("train_rho", self.train_rho), ("test_rho", self.test_rho)] {
            if !(0.0..=1.0).contains(&rho) {
                return err(format!("{name} = {rho} outside [0, 1]"));
            }
        }
        if !(self.noise >= 0.0) || !(self.texture_period > 0.0) || !(self.saliency_sigma > 0.0) {
            return err("noise must be >= 0; texture period and saliency sigma > 0".into());
        }
        Ok(())
    }

    fn rho(&self, split: Split) -> f64 {
        match split {
            Split::Train | Split::Val => self.train_rho,
            Split::Test => self.test_rho,
        }
    }
}

/// Smoothed indicator of the salient region, quantized to 8 bits so the
/// in-memory map equals what a PNG round trip yields. The marker square is
/// zero even where the blur would reach it.
pub fn ground_truth_saliency(cfg: &SpuriousConfig) -> SaliencyMap {
    let s = cfg.image_size;
    let indicator = Grid::from_fn(
        s,
        s,
        |x, y| if cfg.salient.contains(x, y) { 1.0 } else { 0.0 },
    );
    let smoothed = gaussian_blur(&indicator, cfg.saliency_sigma);
    let q = Grid::from_fn(s, s, |x, y| {
        if cfg.marker.contains(x, y) {
            0.0
        } else {
            io::quantize(smoothed.get(x, y)) as f64 / 255.0
        }
    });
    SaliencyMap::clamped(q, SaliencySource::Synthetic)
}

/// Separable Gaussian blur truncated at 4 sigma, zero outside the grid.
fn gaussian_blur(g: &Grid, sigma: f64) -> Grid {
    let r = (4.0 * sigma).floor() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let (w, h) = g.dims();
    let pass = |src: &Grid, horizontal: bool| {
        Grid::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let d = i as isize - r;
                let (sx, sy) = if horizontal {
                    (x as isize + d, y as isize)
                } else {
                    (x as isize, y as isize + d)
                };
                if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    acc += kv * src.get(sx as usize, sy as usize);
                }
            }
            acc
        })
    };
    pass(&pass(g, true), false)
}

fn render_sample(cfg: &SpuriousConfig, id: &str, label: Label, rho: f64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, id));
    let marker_on = if rng.random::<f64>() < rho {
        label == Label::Atypical
    } else {
        rng.random::<bool>()
    };
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let bg_horizontal = rng.random::<bool>();
    let bg_phase = rng.random::<f64>() * std::f64::consts::TAU;
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let s = cfg.image_size;
    let omega = std::f64::consts::TAU / cfg.texture_period;
    Grid::from_fn(s, s, |x, y| {
        let mut v = 0.5;
        if cfg.salient.contains(x, y) {
            let coord = match label {
                Label::Typical => y,
                Label::Atypical => x,
            } as f64;
            v += cfg.texture_contrast * (omega * coord + phase).sin();
        } else if cfg.background_contrast > 0.0 {
            let coord = if bg_horizontal { y } else { x } as f64;
            v += cfg.background_contrast * (omega * coord + bg_phase).sin();
        }
        if cfg.noise > 0.0 {
            v += noise.sample(&mut rng);
        }
        if marker_on && cfg.marker.contains(x, y) {
            v = cfg.marker_value;
        }
        io::quantize(v) as f64 / 255.0
    })
}

/// Whether the marker is drawn in a generated image.
pub fn marker_present(cfg: &SpuriousConfig, image: &Grid) -> bool {
    let m = &cfg.marker;
    let mut total = 0.0;
    for y in m.y..m.y + m.height {
        for x in m.x..m.x + m.width {
            total += image.get(x, y);
        }
    }
    total / (m.width * m.height) as f64 > (0.5 + cfg.marker_value) / 2.0
}

fn sample_id(split: &str, label: Label, k: usize) -> String {
    format!("{split}_{label}_{k:05}")
}

fn make_sample(
    cfg: &SpuriousConfig,
    gt: &SaliencyMap,
    id: String,
    label: Label,
    rho: f64,
) -> Sample {
    Sample {
        image: render_sample(cfg, &id, label, rho),
        id,
        label,
        saliency: Some(gt.clone()),
    }
}

/// Generates all three splits; every sample carries the ground-truth map.
/// Within a split, samples alternate between the two classes.
pub fn generate_spurious_dataset(cfg: &SpuriousConfig) -> Result<Dataset> {
    cfg.validate()?;
    let gt = ground_truth_saliency(cfg);
    let mut ds = Dataset::default();
    for (split, n) in [
        (Split::Train, cfg.per_class.train),
        (Split::Val, cfg.per_class.val),
        (Split::Test, cfg.per_class.test),
    ] {
        let name = split.to_string();
        let samples = ds.split_mut(split);
        for k in 0..n {
            for label in [Label::Typical, Label::Atypical] {
                samples.push(make_sample(
                    cfg,
                    &gt,
                    sample_id(&name, label, k),
                    label,
                    cfg.rho(split),
                ));
            }
        }
    }
    Ok(ds)
}

/// A supply of additional training samples for data-scaling experiments.
pub trait SampleSource {
    fn mint(&mut self, label: Label, count: usize) -> Result<Vec<Sample>>;
}

/// Fresh synthetic training samples drawn with the train-split correlation.
pub struct SyntheticSource {
    cfg: SpuriousConfig,
    ground_truth: SaliencyMap,
    next: [usize; 2],
}

impl SyntheticSource {
    pub fn new(cfg: SpuriousConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            ground_truth: ground_truth_saliency(&cfg),
            cfg,
            next: [0, 0],
        })
    }
}

impl SampleSource for SyntheticSource {
    fn mint(&mut self, label: Label, count: usize) -> Result<Vec<Sample>> {
        let start = self.next[label.index()];
        self.next[label.index()] += count;
        Ok((start..start + count)
            .map(|k| {
                let id = sample_id("extra", label, k);
                make_sample(&self.cfg, &self.ground_truth, id, label, self.cfg.train_rho)
            })
            .collect())
    }
}

/// A fixed corpus of held-back samples; running out is an error.
pub struct FixedPool {
    pools: [Vec<Sample>; 2],
}

impl FixedPool {
    pub fn new(samples: Vec<Sample>) -> Self {
        let mut pools = [Vec::new(), Vec::new()];
        for s in samples {
            pools[s.label.index()].push(s);
        }
        // Drawn from the back, so reverse to hand out in input order.
        pools.iter_mut().for_each(|p| p.reverse());
        Self { pools }
    }
}

impl SampleSource for FixedPool {
    fn mint(&mut self, label: Label, count: usize) -> Result<Vec<Sample>> {
        let pool = &mut self.pools[label.index()];
        if pool.len() < count {
            return Err(Error::SourceExhausted {
                class: label.to_string(),
                requested: count,
                available: pool.len(),
            });
        }
        Ok((0..count)
            .map(|_| pool.pop().expect("length checked"))
            .collect())
    }
}

/// Per-class sample counts for a training split enlarged `multiple` times,
/// totalling `ceil(multiple * n)` with class proportions kept.
pub fn scaled_class_targets(counts: [usize; 2], multiple: f64) -> Result<[usize; 2]> {
    if !(multiple >= 1.0) || !multiple.is_finite() {
        return Err(Error::ConfigInvalid(format!(
            "multiple {multiple} must be >= 1"
        )));
    }
    let n: usize = counts.iter().sum();
    // Tolerance absorbs representation error such as 2.4 * 765.
    let total = (multiple * n as f64 - 1e-9).ceil() as usize;
    let exact: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 * total as f64 / n as f64)
        .collect();
    let mut targets = [exact[0].floor() as usize, exact[1].floor() as usize];
    let mut remaining = total - targets[0] - targets[1];
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        targets[c] += 1;
        remaining -= 1;
    }
    Ok([targets[0].max(counts[0]), targets[1].max(counts[1])])
}

/// Enlarges the training split to `multiple` times its size. Validation and
/// test splits are untouched.
pub fn scale_dataset(
    dataset: &Dataset,
    multiple: f64,
    source: &mut dyn SampleSource,
) -> Result<Dataset> {
    let counts = class_counts(&dataset.train);
    let targets = scaled_class_targets(counts, multiple)?;
    let mut out = dataset.clone();
    for label in [Label::Typical, Label::Atypical] {
        let extra = targets[label.index()] - counts[label.index()];
        if extra > 0 {
            out.train.extend(source.mint(label, extra)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> SpuriousConfig {
        let mut cfg = SpuriousConfig::new(32, seed);
        cfg.per_class = SplitSizes {
            train: 6,
            val: 3,
            test: 4,
        };
        cfg
    }

    #[test]
    fn geometry_is_valid() {
        for size in [32, 64, 128] {
            SpuriousConfig::new(size, 0).validate().unwrap();
        }
        let mut cfg = SpuriousConfig::new(64, 0);
        cfg.marker = cfg.salient;
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = generate_spurious_dataset(&small_cfg(1)).unwrap();
        let b = generate_spurious_dataset(&small_cfg(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_spurious_dataset(&small_cfg(2)).unwrap());
        assert_eq!(class_counts(&a.train), [6, 6]);
        assert_eq!(class_counts(&a.val), [3, 3]);
        assert_eq!(class_counts(&a.test), [4, 4]);
    }

    #[test]
    fn ground_truth_avoids_marker() {
        for size in [32, 64] {
            let cfg = SpuriousConfig::new(size, 0);
            let gt = ground_truth_saliency(&cfg);
            let m = cfg.marker;
            for y in m.y..m.y + m.height {
                for x in m.x..m.x + m.width {
                    assert_eq!(gt.values().get(x, y), 0.0);
                }
            }
            let c = size / 2;
            assert_eq!(gt.values().get(c, c), 1.0);
        }
    }

    #[test]
    fn full_correlation_marks_every_atypical_training_image() {
        let cfg = small_cfg(3);
        let ds = generate_spurious_dataset(&cfg).unwrap();
        for s in ds.train.iter().chain(&ds.val) {
            assert_eq!(
                marker_present(&cfg, &s.image),
                s.label == Label::Atypical,
                "{}",
                s.id
            );
        }
    }

    #[test]
    fn disk_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_spurious_dataset(&small_cfg(4)).unwrap();
        let manifest = ds.write_to_dir(dir.path()).unwrap();
        let back = Dataset::load(
            &manifest,
            ManifestOptions {
                strict_saliency: true,
            },
        )
        .unwrap();
        assert_eq!(back.train.len(), ds.train.len());
        for (a, b) in ds.train.iter().zip(&back.train) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.image, b.image);
            assert_eq!(
                a.saliency.as_ref().unwrap().values(),
                b.saliency.as_ref().unwrap().values()
            );
        }
    }

    #[test]
    fn scale_targets() {
        assert_eq!(scaled_class_targets([198, 567], 2.4).unwrap(), [475, 1361]);
        assert_eq!(scaled_class_targets([10, 10], 1.0).unwrap(), [10, 10]);
        assert!(scaled_class_targets([10, 10], 0.5).is_err());
    }

    #[test]
    fn scale_identity_and_growth() {
        let cfg = small_cfg(5);
        let ds = generate_spurious_dataset(&cfg).unwrap();
        let mut src = SyntheticSource::new(cfg.clone()).unwrap();
        assert_eq!(scale_dataset(&ds, 1.0, &mut src).unwrap(), ds);
        let big = scale_dataset(&ds, 2.5, &mut src).unwrap();
        assert_eq!(big.train.len(), 30);
        assert_eq!(class_counts(&big.train), [15, 15]);
        assert_eq!(big.val, ds.val);
        assert_eq!(big.test, ds.test);
        let ids: std::collections::HashSet<_> = big.train.iter().map(|s| &s.id).collect();
        assert_eq!(ids.len(), big.train.len());
    }

    #[test]
    fn fixed_pool_exhausts() {
        let cfg = small_cfg(6);
        let ds = generate_spurious_dataset(&cfg).unwrap();
        let mut pool = FixedPool::new(ds.test.clone());
        assert!(scale_dataset(&ds, 1.5, &mut pool).is_ok());
        let mut pool = FixedPool::new(ds.test.clone());
        assert!(matches!(
            scale_dataset(&ds, 3.0, &mut pool),
            Err(Error::SourceExhausted { .. })
        ));
    }

    #[test]
    fn fixation_logs_replace_training_maps() {
        let mut ds = generate_spurious_dataset(&small_cfg(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (i, s) in ds.train.iter().enumerate() {
            // The first sample only has a fixation below the duration floor.
            let duration = if i == 0 { 100.0 } else { 300.0 };
            fs::write(
                dir.path().join(format!("{}.csv", s.id)),
                format!("x,y,duration_ms\n5,7,{duration}\n"),
            )
            .unwrap();
        }
        let first = ds.train[0].id.clone();
        let n = ds.train.len();
        let dropped = ds
            .attach_fixations(dir.path(), &EyetrackConfig::new(2.0).unwrap())
            .unwrap();
        assert_eq!(dropped, vec![first]);
        assert_eq!(ds.train.len(), n - 1);
        for s in &ds.train {
            let m = s.saliency.as_ref().unwrap();
            assert_eq!(m.source(), SaliencySource::Eyetrack);
            assert_eq!(m.values().argmax(), (5, 7));
        }
        fs::remove_file(dir.path().join(format!("{}.csv", ds.train[0].id))).unwrap();
        assert!(matches!(
            ds.attach_fixations(dir.path(), &EyetrackConfig::new(2.0).unwrap()),
            Err(Error::MissingFile(_))
        ));
    }
}
