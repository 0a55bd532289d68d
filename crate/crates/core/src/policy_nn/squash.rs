use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{BinRule, MeanFieldAction};
use crate::sim_core::{clip_to_disc, Vec2};

/// How the policy's action vector is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// `(mean_x, mean_y, std_x, std_y)` for every histogram bin.
    PerBin,
    /// One Gaussian shared by all bins.
    Global,
    /// A single agent's movement (parameter-shared multi-agent baseline).
    Agent,
}

impl ActionMode {
    pub fn action_dim(self, bins: usize) -> usize {
        match self {
            ActionMode::PerBin => 4 * bins,
            ActionMode::Global => 4,
            ActionMode::Agent => 2,
        }
    }
}

/// Affine maps from clipped `[-1, 1]` samples to decision-rule parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquashSpec {
    pub mode: ActionMode,
    /// `mean = theta_scale * v`.
    pub theta_scale: f64,
    /// `std = max(sigma_floor, sigma_scale * (v + 1))`.
    pub sigma_scale: f64,
    pub sigma_floor: f64,
}

impl SquashSpec {
    pub fn new(mode: ActionMode) -> Self {
        SquashSpec {
            mode,
            theta_scale: 0.2,
            sigma_scale: 0.125,
            sigma_floor: 1e-3,
        }
    }

    fn rule(&self, v: &[f64]) -> BinRule {
        let c = |x: f64| x.clamp(-1.0, 1.0);
        let s = |x: f64| (self.sigma_scale * (c(x) + 1.0)).max(self.sigma_floor);
        BinRule {
            mean: Vec2::new(self.theta_scale * c(v[0]), self.theta_scale * c(v[1])),
            std: [s(v[2]), s(v[3])],
        }
    }

    /// Maps an action vector, clipped to `[-1, 1]` here if needed, to the decision rule for `bins` bins.
    pub fn to_mfc(&self, raw: &[f64], bins: usize) -> Result<MeanFieldAction> {
        let expected = self.mode.action_dim(bins);
        if raw.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: raw.len(),
            });
        }
        match self.mode {
            ActionMode::PerBin => Ok(MeanFieldAction {
                rules: raw.chunks_exact(4).map(|c| self.rule(c)).collect(),
            }),
            ActionMode::Global => Ok(MeanFieldAction::uniform(bins, self.rule(raw))),
            ActionMode::Agent => Err(Error::InvalidConfig("agent actions are not decision rules".into())),
        }
    }

    /// Movement of one agent from its 2-dim clipped action.
    pub fn to_movement(&self, raw: &[f64], radius: f64) -> Vec2 {
        let c = |x: f64| x.clamp(-1.0, 1.0);
        clip_to_disc(Vec2::new(self.theta_scale * c(raw[0]), self.theta_scale * c(raw[1])), radius)
    }
}

pub fn squash_to_mfc(raw: &[f64], spec: &SquashSpec, bins: usize) -> Result<MeanFieldAction> {
    spec.to_mfc(raw, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let spec = SquashSpec::new(ActionMode::PerBin);
        let h = squash_to_mfc(&vec![0.0; 144], &spec, 36).unwrap();
        assert!(h.rules.iter().all(|r| r.mean == Vec2::ZERO && r.std == [0.125, 0.125]));
        let h = squash_to_mfc(&[1.0, -1.0, 1.0, -1.0], &SquashSpec::new(ActionMode::Global), 36).unwrap();
        assert_eq!(h.rules.len(), 36);
        assert_eq!(h.rules[7].mean, Vec2::new(0.2, -0.2));
        assert_eq!(h.rules[7].std, [0.25, 1e-3]);
        assert!(squash_to_mfc(&[0.0; 5], &spec, 36).is_err());
    }

    proptest! {
        #[test]
        fn output_satisfies_rule_bounds(raw in proptest::collection::vec(-1.0f64..=1.0, 144)) {
            let h = squash_to_mfc(&raw, &SquashSpec::new(ActionMode::PerBin), 36).unwrap();
            prop_assert!(h.validate(0.2).is_ok());
            for r in &h.rules {
                prop_assert!(r.std.iter().all(|&s| (1e-3..=0.25).contains(&s)));
            }
        }
    }
}
