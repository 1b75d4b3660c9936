//! Construction of human saliency maps: averaged annotator masks,
//! duration-weighted eye-tracking heatmaps, and alignment onto the grid a
//! model's activation maps live on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CropBox, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencySource {
    Annotation,
    Eyetrack,
    Mask,
    Synthetic,
    Ablation,
}

/// A nonnegative map with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    values: Grid,
    source: SaliencySource,
}

impl SaliencyMap {
    pub fn new(values: Grid, source: SaliencySource) -> Result<Self> {
        if let Some((i, v)) = values
            .as_slice()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::OutOfRange(format!(
                "saliency value {v} at index {i} outside [0, 1]"
            )));
        }
        Ok(Self { values, source })
    }

    /// Clamps into `[0, 1]` instead of rejecting; NaN becomes 0.
    pub fn clamped(values: Grid, source: SaliencySource) -> Self {
        let values = values.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self { values, source }
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }

    pub fn into_values(self) -> Grid {
        self.values
    }

    pub fn source(&self) -> SaliencySource {
        self.source
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn with_source(self, source: SaliencySource) -> Self {
        Self { source, ..self }
    }
}

/// Pixelwise mean of binary annotator masks. Each output value is
/// `count / m` for `m` masks, so no renormalization is applied.
pub fn average_annotations(masks: &[Grid]) -> Result<SaliencyMap> {
    let first = masks
        .first()
        .ok_or_else(|| Error::EmptyInput("no annotation masks".into()))?;
    let mut counts = vec![0u32; first.len()];
    for (m, mask) in masks.iter().enumerate() {
        first.check_shape(mask)?;
        for (i, (&v, c)) in mask.as_slice().iter().zip(counts.iter_mut()).enumerate() {
            if v == 1.0 {
                *c += 1;
            } else if v != 0.0 {
                return Err(Error::NonBinary {
                    mask: m,
                    index: i,
                    value: v,
                });
            }
        }
    }
    let n = masks.len() as f64;
    let values = Grid::new(
        first.width(),
        first.height(),
        counts.into_iter().map(|c| c as f64 / n).collect(),
    )?;
    SaliencyMap::new(values, SaliencySource::Annotation)
}

/// A single gaze fixation. Pixel centers sit at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "duration_ms")]
    pub duration_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyetrackConfig {
    pub min_duration_ms: f64,
    pub sigma_px: f64,
}

impl EyetrackConfig {
    pub const DEFAULT_MIN_DURATION_MS: f64 = 150.0;

    pub fn new(sigma_px: f64) -> Result<Self> {
        let cfg = Self {
            min_duration_ms: Self::DEFAULT_MIN_DURATION_MS,
            sigma_px,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_duration_ms >= 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "min_duration_ms = {} must be >= 0",
                self.min_duration_ms
            )));
        }
        if !(self.sigma_px > 0.0) || !self.sigma_px.is_finite() {
            return Err(Error::ConfigInvalid(format!(
                "sigma_px = {} must be positive",
                self.sigma_px
            )));
        }
        Ok(())
    }
}

/// Pixel extent of `degrees` of visual angle for a viewer at
/// `viewing_distance_mm` from a display with square pixels of `pixel_pitch_mm`.
pub fn sigma_px_for_visual_angle(
    degrees: f64,
    viewing_distance_mm: f64,
    pixel_pitch_mm: f64,
) -> f64 {
    viewing_distance_mm * degrees.to_radians().tan() / pixel_pitch_mm
}

/// Gaussians are cut off beyond this many standard deviations.
pub const GAUSSIAN_TRUNCATION_SIGMAS: f64 = 4.0;

/// Duration-weighted sum of Gaussians before any normalization. Fixations
/// shorter than the configured minimum are dropped.
pub fn fixation_density(
    fixations: &[Fixation],
    width: usize,
    height: usize,
    cfg: &EyetrackConfig,
) -> Result<Grid> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::OutOfRange(format!("image size {width}x{height}")));
    }
    for f in fixations {
        if !(f.duration_ms > 0.0) || !f.duration_ms.is_finite() {
            return Err(Error::InvalidFixation(format!(
                "duration {} ms must be positive",
                f.duration_ms
            )));
        }
        if !(f.x >= 0.0 && f.x < width as f64 && f.y >= 0.0 && f.y < height as f64) {
            return Err(Error::InvalidFixation(format!(
                "({}, {}) outside {width}x{height} image",
                f.x, f.y
            )));
        }
    }
    let surviving: Vec<&Fixation> = fixations
        .iter()
        .filter(|f| f.duration_ms >= cfg.min_duration_ms)
        .collect();
    if surviving.is_empty() {
        return Err(Error::NoSurvivingFixations {
            total: fixations.len(),
            min_duration_ms: cfg.min_duration_ms,
        });
    }

    let sigma = cfg.sigma_px;
    let radius = GAUSSIAN_TRUNCATION_SIGMAS * sigma;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut density = Grid::zeros(width, height);
    for f in surviving {
        let x0 = ((f.x - radius).floor().max(0.0)) as usize;
        let x1 = ((f.x + radius).ceil() as usize).min(width - 1);
        let y0 = ((f.y - radius).floor().max(0.0)) as usize;
        let y1 = ((f.y + radius).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            let dy = y as f64 - f.y;
            for x in x0..=x1 {
                let dx = x as f64 - f.x;
                let r2 = dx * dx + dy * dy;
                if r2 <= radius * radius {
                    let v = density.get(x, y) + f.duration_ms * (-r2 * inv_two_var).exp();
                    density.set(x, y, v);
                }
            }
        }
    }
    Ok(density)
}

/// Eye-tracking saliency: [`fixation_density`] divided by its maximum.
pub fn fixations_to_heatmap(
    fixations: &[Fixation],
    width: usize,
    height: usize,
    cfg: &EyetrackConfig,
) -> Result<SaliencyMap> {
    let density = fixation_density(fixations, width, height, cfg)?;
    let peak = density.max();
    let values = density.map(|v| v / peak);
    SaliencyMap::new(values, SaliencySource::Eyetrack)
}

/// Crop, then bilinearly resample to `width x height`, clipping to `[0, 1]`.
pub fn align_heatmap(
    map: &SaliencyMap,
    crop: &CropBox,
    width: usize,
    height: usize,
) -> Result<SaliencyMap> {
    let cropped = map.values().crop(crop)?;
    let resized = cropped.resize_bilinear(width, height)?;
    Ok(SaliencyMap::clamped(resized, map.source()))
}

/// Reads a `x,y,duration_ms` fixation log.
pub fn load_fixation_log(path: &Path) -> Result<Vec<Fixation>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "duration_ms"] {
        return Err(Error::SchemaError(format!(
            "{}: expected header x,y,duration_ms",
            path.display()
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e: csv::Error| Error::SchemaError(e.to_string())))
        .collect()
}
