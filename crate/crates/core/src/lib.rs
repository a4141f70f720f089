//! Pseudo-label engineering for semi-supervised segmentation.
//!
//! The crate is organised around the stages of an entropy-filtered,
//! prompt-corrected self-training loop:
//!
//! - [`pixmap`]: probability maps, binary masks, entropy maps and their file formats.
//! - [`edf`]: windowed local entropy, sample retention, entropy weighting and curriculum ranking.
//! - [`dpc`]: connected components, box/point prompt synthesis and mask fusion.
//! - [`losses`]: dice, uncertainty-aware and structural losses with analytic gradients.
//! - [`orchestrator`]: manifests, the segmenter wire protocol, mock segmenters and the cycle loop.
//!
//! Map math is generic over the [`Scalar`] type. The aliases below pin the
//! two common instantiations.

pub mod dpc;
pub mod edf;
mod error;
pub mod losses;
pub mod orchestrator;
pub mod pixmap;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use pixmap::{BinaryMask, EntropyMap, Grid, NormMode, ProbMap};

pub type ProbMapF32 = pixmap::ProbMap<f32>;
pub type ProbMapF64 = pixmap::ProbMap<f64>;
pub type EntropyMapF32 = pixmap::EntropyMap<f32>;
pub type EntropyMapF64 = pixmap::EntropyMap<f64>;
pub type EdfVerdictF64 = edf::EdfVerdict<f64>;
pub type LossReportF64 = losses::LossReport<f64>;
