//! Prompt-guided correction of pseudo-labels.
//!
//! A weighted pseudo-label is binarized and split into connected components.
//! Tiny components are dropped, then the survivors become a single union box
//! plus one interior point each. The promptable segmenter's answer is fused
//! back with the pseudo-label.

mod components;
mod fuse;
mod prompt;

pub use components::{extract_components, filter_small, BBox, Component, Connectivity};
pub use fuse::{fuse, FusionMethod};
pub use prompt::{
    analyze_prompts, box_prompt, make_prompts, principal_axis, safe_center, PromptAnalysis,
    PromptMode, PromptSet,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpcConfig {
    /// Components smaller than this many pixels are dropped.
    pub min_area_abs: usize,
    /// Components smaller than this fraction of total foreground are dropped.
    pub min_area_rel: f64,
    pub connectivity: Connectivity,
    pub binarize_threshold: f64,
    pub prompt_mode: PromptMode,
    pub fusion: FusionMethod,
    /// When set, the fused map is binarized at this threshold.
    pub fusion_binarize: Option<f64>,
}

impl Default for DpcConfig {
    fn default() -> Self {
        Self {
            min_area_abs: 16,
            min_area_rel: 0.01,
            connectivity: Connectivity::Eight,
            binarize_threshold: 0.5,
            prompt_mode: PromptMode::Hybrid,
            fusion: FusionMethod::Ratio,
            fusion_binarize: None,
        }
    }
}

impl DpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.min_area_rel) {
            return Err(Error::Config(format!(
                "dpc.min_area_rel must lie in [0,1), got {}",
                self.min_area_rel
            )));
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return Err(Error::Config(format!(
                "dpc.binarize_threshold must lie in [0,1], got {}",
                self.binarize_threshold
            )));
        }
        if let Some(t) = self.fusion_binarize {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!(
                    "dpc.fusion_binarize must lie in [0,1], got {t}"
                )));
            }
        }
        Ok(())
    }
}
