//! The guide in `book/` compiled as one module per chapter, so `cargo test`
//! runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/saliency.md")]
pub mod saliency {}
#[doc = include_str!("../../../book/src/loss.md")]
pub mod loss {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/presets.md")]
pub mod presets {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
