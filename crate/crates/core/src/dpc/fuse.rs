use serde::{Deserialize, Serialize};

use super::DpcConfig;
use crate::pixmap::Grid;
use crate::{ProbMap, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    /// Equal-weight average.
    #[default]
    Ratio,
    /// Pointwise minimum.
    Intersect,
    /// Pointwise maximum.
    Union,
}

/// Combines the weighted pseudo-label with the promptable segmenter's map.
pub fn fuse<S: Scalar>(pe: &ProbMap<S>, ps: &ProbMap<S>, cfg: &DpcConfig) -> Result<ProbMap<S>> {
    pe.check_shape(ps.grid())?;
    let half = S::lit(0.5);
    let threshold = cfg.fusion_binarize.map(S::lit);
    let data = pe
        .data()
        .iter()
        .zip(ps.data())
        .map(|(&a, &b)| {
            let v = match cfg.fusion {
                FusionMethod::Ratio => (half * a + half * b).max(a.min(b)).min(a.max(b)),
                FusionMethod::Intersect => a.min(b),
                FusionMethod::Union => a.max(b),
            };
            match threshold {
                Some(t) if v > t => S::one(),
                Some(_) => S::zero(),
                None => v,
            }
        })
        .collect();
    Ok(ProbMap::from_grid_unchecked(Grid::new(
        pe.width(),
        pe.height(),
        data,
    )?))
}
