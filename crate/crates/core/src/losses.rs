//! Supervision losses with analytic gradients with respect to the prediction.
//!
//! Every loss returns its value and a per-pixel gradient so an external
//! trainer can use these as reference implementations, and so the gradients
//! can be checked against finite differences.

use serde::{Deserialize, Serialize};

use crate::pixmap::box_mean;
use crate::{Error, ProbMap, Result, Scalar};

/// Floor applied inside logarithms.
const LOG_EPS: f64 = 1e-12;
/// Window of the local mean used for boundary weights.
const BOUNDARY_WINDOW: usize = 31;
const BOUNDARY_GAIN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UalForm {
    /// `sum p ln p + (1-p) ln(1-p)`, as the formula is printed (negative entropy).
    #[default]
    Literal,
    /// `sum 1 - (2p-1)^2`, which pushes predictions away from 0.5.
    Confidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralForm {
    /// Boundary-weighted BCE plus boundary-weighted IoU.
    #[default]
    Weighted,
    /// Unweighted BCE plus soft IoU.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub dice_p: f64,
    pub dice_smooth: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_ual: f64,
    pub ual_form: UalForm,
    pub structural_form: StructuralForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            dice_p: 2.0,
            dice_smooth: 1.0,
            alpha: 4.0,
            beta: 2.0,
            lambda_ual: 1.0,
            ual_form: UalForm::Literal,
            structural_form: StructuralForm::Weighted,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dice_smooth.is_nan() || self.dice_smooth <= 0.0 {
            return Err(Error::Config(format!(
                "loss.dice_smooth must be > 0, got {}",
                self.dice_smooth
            )));
        }
        if self.dice_p.is_nan() || self.dice_p < 1.0 {
            return Err(Error::Config(format!(
                "loss.dice_p must be >= 1, got {}",
                self.dice_p
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_ual) {
            return Err(Error::Config(format!(
                "loss.lambda_ual must lie in [0,1], got {}",
                self.lambda_ual
            )));
        }
        Ok(())
    }
}

/// Linear schedule for the uncertainty-aware weight: it tracks the learning
/// rate relative to its initial value.
pub fn lambda_from_lr(current_lr: f64, initial_lr: f64, lambda_max: f64) -> f64 {
    if initial_lr <= 0.0 {
        return 0.0;
    }
    (lambda_max * current_lr / initial_lr).clamp(0.0, lambda_max.max(0.0))
}

/// A loss value and its gradient with respect to each prediction pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss<S> {
    pub value: S,
    pub grad: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport<S> {
    pub structural: S,
    pub dice: S,
    pub ual: S,
    pub total: S,
    pub alpha: f64,
    pub beta: f64,
    #[serde(skip)]
    pub grad: Option<Vec<S>>,
}

pub fn dice_loss<S: Scalar>(pred: &ProbMap<S>, target: &ProbMap<S>, cfg: &LossConfig) -> Result<Loss<S>> {
    pred.check_shape(target.grid())?;
    let p = S::lit(cfg.dice_p);
    let smooth = S::lit(cfg.dice_smooth);
    let two = S::lit(2.0);
    let (mut inter, mut sp, mut st) = (S::zero(), S::zero(), S::zero());
    for (&x, &t) in pred.data().iter().zip(target.data()) {
        let (xp, tp) = (x.powf(p), t.powf(p));
        inter = inter + xp * tp;
        sp = sp + xp;
        st = st + tp;
    }
    let num = two * inter + smooth;
    let den = sp + st + smooth;
    let value = S::one() - num / den;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&x, &t)| {
            let dxp = p * x.powf(p - S::one());
            let dnum = two * dxp * t.powf(p);
            -(dnum * den - num * dxp) / (den * den)
        })
        .collect();
    Ok(Loss { value, grad })
}

fn xlogx<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        v * v.ln()
    } else {
        S::zero()
    }
}

pub fn ual_loss<S: Scalar>(pred: &ProbMap<S>, cfg: &LossConfig) -> Loss<S> {
    let lambda = S::lit(cfg.lambda_ual);
    let eps = S::lit(LOG_EPS);
    let two = S::lit(2.0);
    match cfg.ual_form {
        UalForm::Literal => {
            let value = lambda
                * pred
                    .data()
                    .iter()
                    .map(|&p| xlogx(p) + xlogx(S::one() - p))
                    .sum::<S>();
            let grad = pred
                .data()
                .iter()
                .map(|&p| lambda * (p.max(eps).ln() - (S::one() - p).max(eps).ln()))
                .collect();
            Loss { value, grad }
        }
        UalForm::Confidence => {
            let value = lambda
                * pred
                    .data()
                    .iter()
                    .map(|&p| {
                        let c = two * p - S::one();
                        S::one() - c * c
                    })
                    .sum::<S>();
            let grad = pred
                .data()
                .iter()
                .map(|&p| -lambda * S::lit(4.0) * (two * p - S::one()))
                .collect();
            Loss { value, grad }
        }
    }
}

/// Per-pixel BCE and its derivative in `p`. Zero-coefficient terms are
/// skipped so exact matches cost exactly zero.
fn bce<S: Scalar>(p: S, t: S) -> (S, S) {
    let eps = S::lit(LOG_EPS);
    let (mut l, mut g) = (S::zero(), S::zero());
    if t > S::zero() {
        if p > eps {
            l = l - t * p.ln();
            g = g - t / p;
        } else {
            l = l - t * eps.ln();
        }
    }
    let (q, u) = (S::one() - p, S::one() - t);
    if u > S::zero() {
        if q > eps {
            l = l - u * q.ln();
            g = g + u / q;
        } else {
            l = l - u * eps.ln();
        }
    }
    (l, g)
}

/// `1 + 5 |mean31(target) - target|`: heavier near target boundaries.
pub fn boundary_weights<S: Scalar>(target: &ProbMap<S>) -> Result<Vec<S>> {
    let mu = box_mean(target.grid(), BOUNDARY_WINDOW)?;
    let gain = S::lit(BOUNDARY_GAIN);
    Ok(mu
        .data()
        .iter()
        .zip(target.data())
        .map(|(&m, &t)| S::one() + gain * (m - t).abs())
        .collect())
}

/// Weighted BCE plus weighted IoU (or their unweighted forms).
pub fn structural_loss<S: Scalar>(
    pred: &ProbMap<S>,
    target: &ProbMap<S>,
    cfg: &LossConfig,
) -> Result<Loss<S>> {
    pred.check_shape(target.grid())?;
    let n = pred.len();
    let weights = match cfg.structural_form {
        StructuralForm::Weighted => boundary_weights(target)?,
        StructuralForm::Plain => vec![S::one(); n],
    };
    let wsum: S = weights.iter().copied().sum();

    let mut bce_sum = S::zero();
    let mut bce_grad = Vec::with_capacity(n);
    let (mut inter, mut union) = (S::zero(), S::zero());
    for ((&p, &t), &w) in pred.data().iter().zip(target.data()).zip(&weights) {
        let (l, g) = bce(p, t);
        bce_sum = bce_sum + w * l;
        bce_grad.push(w * g);
        inter = inter + w * p * t;
        union = union + w * (p + t);
    }
    let wbce = bce_sum / wsum;
    let den = union - inter + S::one();
    let num = inter + S::one();
    let wiou = S::one() - num / den;

    let grad = bce_grad
        .into_iter()
        .zip(pred.data().iter().zip(target.data()).zip(&weights))
        .map(|(gb, ((_, &t), &w))| {
            let dnum = w * t;
            let dden = w * (S::one() - t);
            gb / wsum - (dnum * den - num * dden) / (den * den)
        })
        .collect();
    Ok(Loss {
        value: wbce + wiou,
        grad,
    })
}

/// `structural + alpha * dice + beta * ual`, with the combined gradient.
pub fn total_loss<S: Scalar>(
    pred: &ProbMap<S>,
    target: &ProbMap<S>,
    cfg: &LossConfig,
) -> Result<LossReport<S>> {
    cfg.validate()?;
    let structural = structural_loss(pred, target, cfg)?;
    let dice = dice_loss(pred, target, cfg)?;
    let ual = ual_loss(pred, cfg);
    let (alpha, beta) = (S::lit(cfg.alpha), S::lit(cfg.beta));
    let grad = structural
        .grad
        .iter()
        .zip(&dice.grad)
        .zip(&ual.grad)
        .map(|((&s, &d), &u)| s + alpha * d + beta * u)
        .collect();
    Ok(LossReport {
        structural: structural.value,
        dice: dice.value,
        ual: ual.value,
        total: structural.value + alpha * dice.value + beta * ual.value,
        alpha: cfg.alpha,
        beta: cfg.beta,
        grad: Some(grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, v: &[f64]) -> ProbMap<f64> {
        ProbMap::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn dice_perfect_binary_match_is_zero() {
        let m = map(3, 2, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(dice_loss(&m, &m, &LossConfig::default()).unwrap().value, 0.0);
    }

    #[test]
    fn dice_all_zero_vs_all_one() {
        let pred = map(2, 2, &[0.0; 4]);
        let target = map(2, 2, &[1.0; 4]);
        let l = dice_loss(&pred, &target, &LossConfig::default()).unwrap().value;
        assert!((l - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ual_fixtures() {
        let cfg = LossConfig::default();
        let binary = map(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(ual_loss(&binary, &cfg).value, 0.0);
        let half = map(3, 3, &[0.5; 9]);
        let lit = ual_loss(&half, &cfg).value;
        assert!((lit + 9.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let conf = LossConfig {
            ual_form: UalForm::Confidence,
            ..cfg
        };
        assert!((ual_loss(&half, &conf).value - 9.0).abs() < 1e-12);
    }

    #[test]
    fn structural_perfect_ones() {
        let ones = map(4, 4, &[1.0; 16]);
        for form in [StructuralForm::Weighted, StructuralForm::Plain] {
            let cfg = LossConfig {
                structural_form: form,
                ..LossConfig::default()
            };
            assert_eq!(structural_loss(&ones, &ones, &cfg).unwrap().value, 0.0);
        }
    }

    #[test]
    fn constant_target_weights_degenerate() {
        let pred = ProbMap::from_fn(6, 5, |x, y| 0.1 + 0.8 * ((x * 5 + y * 3) % 7) as f64 / 7.0).unwrap();
        let target = map(6, 5, &[1.0; 30]);
        let w = LossConfig::default();
        let p = LossConfig {
            structural_form: StructuralForm::Plain,
            ..LossConfig::default()
        };
        let a = structural_loss(&pred, &target, &w).unwrap();
        let b = structural_loss(&pred, &target, &p).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn total_composition_and_defaults() {
        let pred = map(2, 2, &[0.2, 0.7, 0.9, 0.4]);
        let target = map(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let cfg = LossConfig::default();
        assert_eq!((cfg.alpha, cfg.beta), (4.0, 2.0));
        let r = total_loss(&pred, &target, &cfg).unwrap();
        assert_eq!(r.total, r.structural + 4.0 * r.dice + 2.0 * r.ual);
    }

    #[test]
    fn total_zero_on_binary_match_without_ual() {
        let m = map(3, 1, &[1.0, 0.0, 1.0]);
        let cfg = LossConfig {
            lambda_ual: 0.0,
            ..LossConfig::default()
        };
        assert_eq!(total_loss(&m, &m, &cfg).unwrap().total, 0.0);
    }

    #[test]
    fn lambda_schedule() {
        assert_eq!(lambda_from_lr(1e-4, 1e-4, 1.0), 1.0);
        assert!((lambda_from_lr(5e-5, 1e-4, 0.8) - 0.4).abs() < 1e-15);
        assert_eq!(lambda_from_lr(1e-4, 0.0, 1.0), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig {
            dice_smooth: 0.0,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            dice_p: 0.5,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = map(2, 1, &[0.1, 0.2]);
        let b = map(1, 2, &[0.1, 0.2]);
        assert!(dice_loss(&a, &b, &LossConfig::default()).is_err());
        assert!(structural_loss(&a, &b, &LossConfig::default()).is_err());
    }
}
