use serde::{Deserialize, Serialize};

use crate::edf::RankOrder;
use crate::{Error, Result};

/// How many retained samples join the labeled set each cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExpansionKind {
    /// Everything that passes filtering, in the first cycle only.
    OneShot,
    /// A fixed fraction of the initial unlabeled pool per cycle.
    EqualRatio { fraction: f64 },
    /// As many as are currently labeled, so the labeled set at most doubles.
    EpochDynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionPolicy {
    pub kind: ExpansionKind,
    pub order: RankOrder,
    /// Trainer epochs between expansions; forwarded to the trainer hook.
    pub cycle_epochs: u32,
    pub total_epochs: u32,
}

impl Default for ExpansionPolicy {
    fn default() -> Self {
        Self {
            kind: ExpansionKind::EpochDynamic,
            order: RankOrder::LowToHigh,
            cycle_epochs: 20,
            total_epochs: 300,
        }
    }
}

impl ExpansionPolicy {
    pub fn validate(&self) -> Result<()> {
        if let ExpansionKind::EqualRatio { fraction } = self.kind {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "policy fraction must lie in (0,1], got {fraction}"
                )));
            }
        }
        if self.cycle_epochs == 0 || !self.total_epochs.is_multiple_of(self.cycle_epochs) {
            return Err(Error::Config(format!(
                "cycle_epochs {} must divide total_epochs {}",
                self.cycle_epochs, self.total_epochs
            )));
        }
        Ok(())
    }

    /// True when later cycles can never add samples.
    pub fn exhausted_after(&self, cycle: u32) -> bool {
        matches!(self.kind, ExpansionKind::OneShot) && cycle >= 1
    }
}

/// Number of top-ranked retained samples to move into the labeled set in
/// `cycle` (1-based).
pub fn expansion_count(
    policy: &ExpansionPolicy,
    cycle: u32,
    current_labeled: usize,
    passing: usize,
    initial_unlabeled: usize,
) -> usize {
    match policy.kind {
        ExpansionKind::EpochDynamic => current_labeled.min(passing),
        ExpansionKind::EqualRatio { fraction } => {
            ((fraction * initial_unlabeled as f64).ceil() as usize).min(passing)
        }
        ExpansionKind::OneShot if cycle == 1 => passing,
        ExpansionKind::OneShot => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(kind: ExpansionKind) -> ExpansionPolicy {
        ExpansionPolicy {
            kind,
            ..ExpansionPolicy::default()
        }
    }

    #[test]
    fn fixtures() {
        let dynamic = policy(ExpansionKind::EpochDynamic);
        assert_eq!(expansion_count(&dynamic, 1, 40, 100, 4000), 40);
        assert_eq!(expansion_count(&dynamic, 3, 500, 120, 4000), 120);
        let once = policy(ExpansionKind::OneShot);
        assert_eq!(expansion_count(&once, 1, 8, 50, 56), 50);
        assert_eq!(expansion_count(&once, 2, 58, 6, 56), 0);
        let ratio = policy(ExpansionKind::EqualRatio { fraction: 0.25 });
        assert_eq!(expansion_count(&ratio, 1, 8, 50, 56), 14);
        assert_eq!(expansion_count(&ratio, 4, 50, 6, 56), 6);
    }

    #[test]
    fn validation() {
        assert!(ExpansionPolicy::default().validate().is_ok());
        assert!(policy(ExpansionKind::EqualRatio { fraction: 0.0 }).validate().is_err());
        let bad = ExpansionPolicy {
            cycle_epochs: 7,
            ..ExpansionPolicy::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn toml_shape() {
        let p: ExpansionPolicy = toml::from_str(
            "kind = { kind = \"equal_ratio\", fraction = 0.5 }\norder = { kind = \"random\", seed = 3 }\n",
        )
        .unwrap();
        assert_eq!(p.kind, ExpansionKind::EqualRatio { fraction: 0.5 });
        assert_eq!(p.order, RankOrder::Random { seed: 3 });
    }
}
