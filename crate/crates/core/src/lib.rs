//! Saliency-guided training of image classifiers.
//!
//! The loss in [`loss`] blends cross-entropy with a distance between a
//! model's class activation map and a human saliency map. The remaining
//! modules provide the surrounding apparatus: building human maps
//! ([`saliency`]), a small CNN backbone ([`model`]), a deterministic training
//! loop ([`training`]), the blend/measure grid search and preset ranking
//! ([`search`]), control saliency substitutes ([`ablations`]), a synthetic
//! shortcut-learning benchmark ([`datasets`]) and metrics ([`evaluation`]).

pub mod ablations;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod io;
pub mod loss;
pub mod manifest;
pub mod model;
pub mod saliency;
pub mod search;
pub mod training;

pub use error::{Error, Result};
pub use grid::{CropBox, Grid};
