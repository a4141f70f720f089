//! Entropy-based dynamic filtering of pseudo-labels.
//!
//! A prediction is scored by how many of its pixels have a windowed binary
//! entropy above a fraction of the whole-map entropy. Retained predictions
//! are down-weighted where they are locally uncertain and ranked by the
//! mean local entropy of the weighted map.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pixmap::{box_mean, normalize, EntropyMap, Grid, NormMode, ProbMap};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    /// Entropy in bits, so binary entropy lies in `[0,1]`.
    #[default]
    Two,
    Natural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdfConfig {
    /// Side of the square mean-filter window; odd.
    pub window: usize,
    /// Retain a sample iff its uncertainty score is below this.
    pub tau_alpha: f64,
    /// A pixel counts as uncertain when its local entropy exceeds
    /// `global_factor` times the global entropy.
    pub global_factor: f64,
    /// Exponent on `(1 - E_local)` in the weight map.
    pub decay_k: f64,
    pub log_base: LogBase,
    pub norm_mode: NormMode,
}

impl Default for EdfConfig {
    fn default() -> Self {
        Self {
            window: 7,
            tau_alpha: 0.3,
            global_factor: 0.5,
            decay_k: 1.0,
            log_base: LogBase::Two,
            norm_mode: NormMode::Clamp,
        }
    }
}

impl EdfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "edf.window must be odd and >= 1, got {}",
                self.window
            )));
        }
        if !(self.tau_alpha > 0.0 && self.tau_alpha < 1.0) {
            return Err(Error::Config(format!(
                "edf.tau_alpha must lie in (0,1), got {}",
                self.tau_alpha
            )));
        }
        if self.decay_k.is_nan() || self.decay_k < 0.0 {
            return Err(Error::Config(format!(
                "edf.decay_k must be >= 0, got {}",
                self.decay_k
            )));
        }
        if !(self.global_factor.is_finite() && self.global_factor >= 0.0) {
            return Err(Error::Config(format!(
                "edf.global_factor must be finite and >= 0, got {}",
                self.global_factor
            )));
        }
        Ok(())
    }
}

/// Outcome of filtering one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfVerdict<S> {
    pub u_alpha: S,
    pub retained: bool,
    /// Mean local entropy of the weighted map, in the configured log base.
    pub mean_local_entropy: S,
    pub weighted: ProbMap<S>,
}

/// Binary entropy in nats with `0 log 0 = 0`.
fn binary_entropy_nats<S: Scalar>(p: S) -> S {
    let p = p.max(S::zero()).min(S::one());
    let q = S::one() - p;
    let term = |v: S| if v > S::zero() { -v * v.ln() } else { S::zero() };
    term(p) + term(q)
}

fn to_base<S: Scalar>(nats: S, base: LogBase) -> S {
    match base {
        LogBase::Natural => nats,
        LogBase::Two => nats / S::lit(std::f64::consts::LN_2),
    }
}

fn local_entropy_nats<S: Scalar>(map: &ProbMap<S>, cfg: &EdfConfig) -> Result<Grid<S>> {
    let norm = normalize(map.grid(), cfg.norm_mode);
    let p_f = box_mean(norm.grid(), cfg.window)?;
    Ok(p_f.map(binary_entropy_nats))
}

fn global_entropy_nats<S: Scalar>(map: &ProbMap<S>, cfg: &EdfConfig) -> S {
    binary_entropy_nats(normalize(map.grid(), cfg.norm_mode).mean())
}

/// Binary entropy of the windowed mean foreground probability at every pixel.
pub fn local_entropy<S: Scalar>(map: &ProbMap<S>, cfg: &EdfConfig) -> Result<EntropyMap<S>> {
    let nats = local_entropy_nats(map, cfg)?;
    Ok(EntropyMap::from_grid_unchecked(
        nats.map(|e| to_base(e, cfg.log_base)),
    ))
}

/// Binary entropy of the whole-map mean foreground probability.
pub fn global_entropy<S: Scalar>(map: &ProbMap<S>, cfg: &EdfConfig) -> S {
    to_base(global_entropy_nats(map, cfg), cfg.log_base)
}

/// Fraction of pixels whose local entropy strictly exceeds
/// `global_factor * E_global`.
///
/// The comparison is done in nats regardless of `log_base`, so the score is
/// exactly base-independent.
pub fn uncertainty_score<S: Scalar>(map: &ProbMap<S>, cfg: &EdfConfig) -> Result<S> {
    let local = local_entropy_nats(map, cfg)?;
    Ok(score_from_nats(&local, global_entropy_nats(map, cfg), cfg))
}

fn score_from_nats<S: Scalar>(local: &Grid<S>, global: S, cfg: &EdfConfig) -> S {
    let limit = global * S::lit(cfg.global_factor);
    let hits = local.data().iter().filter(|e| **e > limit).count();
    S::from_usize(hits).expect("count fits scalar") / S::from_usize(local.len()).expect("count fits scalar")
}

pub fn retain<S: Scalar>(map: &ProbMap<S>, cfg: &EdfConfig) -> Result<bool> {
    Ok(uncertainty_score(map, cfg)? < S::lit(cfg.tau_alpha))
}

/// `P * (0.5 + 0.5 * (1 - E)^k)` pointwise.
///
/// `entropy` is interpreted in `cfg.log_base` and rescaled to bits first, so
/// the weight always sees an entropy in `[0,1]`.
pub fn entropy_weight<S: Scalar>(
    map: &ProbMap<S>,
    entropy: &EntropyMap<S>,
    cfg: &EdfConfig,
) -> Result<ProbMap<S>> {
    map.check_shape(entropy.grid())?;
    let half = S::lit(0.5);
    let k = S::lit(cfg.decay_k);
    let data = map
        .data()
        .iter()
        .zip(entropy.data())
        .map(|(&p, &e)| {
            let bits = match cfg.log_base {
                LogBase::Two => e,
                LogBase::Natural => e / S::lit(std::f64::consts::LN_2),
            };
            let certainty = (S::one() - bits).max(S::zero()).min(S::one());
            let w = half + half * certainty.powf(k);
            (p * w).max(S::zero()).min(p)
        })
        .collect();
    Ok(ProbMap::from_grid_unchecked(Grid::new(
        map.width(),
        map.height(),
        data,
    )?))
}

/// Runs scoring, retention and weighting on one prediction.
pub fn evaluate_sample<S: Scalar>(map: &ProbMap<S>, cfg: &EdfConfig) -> Result<EdfVerdict<S>> {
    cfg.validate()?;
    let local_nats = local_entropy_nats(map, cfg)?;
    let u_alpha = score_from_nats(&local_nats, global_entropy_nats(map, cfg), cfg);
    let local = EntropyMap::from_grid_unchecked(local_nats.map(|e| to_base(e, cfg.log_base)));
    let weighted = entropy_weight(map, &local, cfg)?;
    let mean_local_entropy = local_entropy(&weighted, cfg)?.mean();
    Ok(EdfVerdict {
        u_alpha,
        retained: u_alpha < S::lit(cfg.tau_alpha),
        mean_local_entropy,
        weighted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RankOrder {
    #[default]
    LowToHigh,
    HighToLow,
    Random { seed: u64 },
}

/// Orders retained samples for expansion. Ties fall back to the id.
pub fn rank_candidates<S: Scalar>(verdicts: &[(String, S)], order: RankOrder) -> Vec<String> {
    let mut items: Vec<(&str, S)> = verdicts.iter().map(|(id, e)| (id.as_str(), *e)).collect();
    let by_entropy = |a: &S, b: &S| a.partial_cmp(b).unwrap_or(Ordering::Equal);
    match order {
        RankOrder::LowToHigh => {
            items.sort_by(|a, b| by_entropy(&a.1, &b.1).then_with(|| a.0.cmp(b.0)));
        }
        RankOrder::HighToLow => {
            items.sort_by(|a, b| by_entropy(&b.1, &a.1).then_with(|| a.0.cmp(b.0)));
        }
        RankOrder::Random { seed } => {
            items.sort_by(|a, b| a.0.cmp(b.0));
            items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }
    items.into_iter().map(|(id, _)| id.to_owned()).collect()
}
