//! Stand-ins for human saliency used by the control experiments: uniform
//! noise, inverted human maps, a centered Gaussian, and binarized
//! segmentation masks. All of them yield ordinary [`SaliencyMap`]s, so the
//! training loop never needs to know where a map came from.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io;
use crate::saliency::{SaliencyMap, SaliencySource};

pub const DEFAULT_SIGMA_FRACTION: f64 = 0.25;

/// I.i.d. uniform `[0, 1]` values.
pub fn noise_saliency(width: usize, height: usize, seed: u64) -> Result<SaliencyMap> {
    if width == 0 || height == 0 {
        return Err(Error::OutOfRange(format!("shape {width}x{height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Grid::from_fn(width, height, |_, _| rng.random::<f64>());
    SaliencyMap::new(g, SaliencySource::Ablation)
}

/// Exact complement `1 - v`, without renormalization.
pub fn invert_saliency(map: &SaliencyMap) -> SaliencyMap {
    SaliencyMap::clamped(map.values().map(|v| 1.0 - v), SaliencySource::Ablation)
}

/// Isotropic Gaussian centered on the map, with standard deviation
/// `sigma_fraction * min(width, height)`, scaled so its peak is 1.
pub fn gaussian_kernel_saliency(
    width: usize,
    height: usize,
    sigma_fraction: f64,
) -> Result<SaliencyMap> {
    if !(sigma_fraction > 0.0) || !sigma_fraction.is_finite() {
        return Err(Error::ConfigInvalid(format!(
            "sigma_fraction = {sigma_fraction} must be positive"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::OutOfRange(format!("shape {width}x{height}")));
    }
    let sigma = sigma_fraction * width.min(height) as f64;
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let g = Grid::from_fn(width, height, |x, y| {
        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        (-d2 / (2.0 * sigma * sigma)).exp()
    });
    let peak = g.max();
    SaliencyMap::new(g.map(|v| v / peak), SaliencySource::Ablation)
}

/// Thresholds at 0.5 into a `{0, 1}` map.
pub fn binarize_mask(mask: &Grid) -> Grid {
    mask.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// Reads a single-channel segmentation mask and binarizes it.
pub fn mask_to_saliency(path: &Path) -> Result<SaliencyMap> {
    let grid = io::load_gray_png(path).map_err(|e| match e {
        Error::UnreadableMask(m) => Error::UnreadableMask(format!("{}: {m}", path.display())),
        other => Error::UnreadableMask(format!("{}: {other}", path.display())),
    })?;
    SaliencyMap::new(binarize_mask(&grid), SaliencySource::Mask)
}

/// Stable per-sample seed from a run seed and a sample identifier.
pub fn sample_seed(base_seed: u64, sample_id: &str) -> u64 {
    // FNV-1a over the id, then a splitmix64 finalizer mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in sample_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ base_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Where the training-time saliency of each sample comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencySubstitute {
    #[default]
    Human,
    Noise,
    Inverted,
    Gaussian,
    Mask,
}

impl SaliencySubstitute {
    pub fn name(self) -> &'static str {
        match self {
            SaliencySubstitute::Human => "human",
            SaliencySubstitute::Noise => "noise",
            SaliencySubstitute::Inverted => "inverted",
            SaliencySubstitute::Gaussian => "gaussian",
            SaliencySubstitute::Mask => "mask",
        }
    }
}

impl fmt::Display for SaliencySubstitute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SaliencySubstitute {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(SaliencySubstitute::Human),
            "noise" => Ok(SaliencySubstitute::Noise),
            "inverted" => Ok(SaliencySubstitute::Inverted),
            "gaussian" => Ok(SaliencySubstitute::Gaussian),
            "mask" => Ok(SaliencySubstitute::Mask),
            other => Err(Error::ConfigInvalid(format!(
                "unknown saliency source {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstitutePlan {
    pub source: SaliencySubstitute,
    pub base_seed: u64,
    pub sigma_fraction: f64,
}

impl Default for SubstitutePlan {
    fn default() -> Self {
        Self {
            source: SaliencySubstitute::Human,
            base_seed: 0,
            sigma_fraction: DEFAULT_SIGMA_FRACTION,
        }
    }
}

impl SubstitutePlan {
    pub fn new(source: SaliencySubstitute) -> Self {
        Self {
            source,
            ..Self::default()
        }
    }

    /// Produces the map a sample trains against. `provided` is the map that
    /// shipped with the sample: a human map, or a segmentation mask for
    /// [`SaliencySubstitute::Mask`]. Generated substitutes ignore it.
    pub fn apply(
        &self,
        sample_id: &str,
        provided: Option<&SaliencyMap>,
        width: usize,
        height: usize,
    ) -> Result<Option<SaliencyMap>> {
        Ok(match self.source {
            SaliencySubstitute::Human => provided.cloned(),
            SaliencySubstitute::Inverted => provided.map(invert_saliency),
            SaliencySubstitute::Mask => provided
                .map(|m| SaliencyMap::new(binarize_mask(m.values()), SaliencySource::Mask))
                .transpose()?,
            SaliencySubstitute::Noise => Some(noise_saliency(
                width,
                height,
                sample_seed(self.base_seed, sample_id),
            )?),
            SaliencySubstitute::Gaussian => Some(gaussian_kernel_saliency(
                width,
                height,
                self.sigma_fraction,
            )?),
        })
    }
}
