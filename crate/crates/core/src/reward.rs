//! Per-step reward: relative covariance-trace reduction over the UCB set plus a
//! weighted count of newly discovered targets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{GpError, GpModel};
use crate::world::Action;
use crate::Scalar;

const MIN_TRACE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("posterior trace {0:e} over the candidate set is degenerate")]
    DegenerateTrace(f64),
    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weight of the exploration (trace-reduction) term.
    pub alpha: f64,
    /// Weight of the newly-discovered-target count.
    pub delta: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { alpha: 1.0, delta: 0.01 }
    }
}

/// `(tr_before − tr_after) / tr_before`.
pub fn trace_reduction<T: Scalar>(tr_before: T, tr_after: T) -> Result<T, RewardError> {
    if !(tr_before.as_f64() > MIN_TRACE) {
        return Err(RewardError::DegenerateTrace(tr_before.as_f64()));
    }
    Ok((tr_before - tr_after) / tr_before)
}

/// Sum of posterior variances over `a_hat`.
pub fn posterior_trace<T: Scalar>(a_hat: &[Action], gp: &GpModel<T>) -> Result<T, GpError> {
    Ok(gp.posterior_mean_var(a_hat)?.1.into_iter().sum())
}

/// Relative reduction of `Tr P(Â)` from `before` to `after`.
pub fn exploration_reward<T: Scalar>(
    a_hat: &[Action],
    before: &GpModel<T>,
    after: &GpModel<T>,
) -> Result<T, RewardError> {
    assert!(!a_hat.is_empty(), "candidate set must be non-empty");
    trace_reduction(posterior_trace(a_hat, before)?, posterior_trace(a_hat, after)?)
}

/// The raw count `ν` of newly discovered targets.
pub fn information_reward<T: Scalar>(nu: usize) -> T {
    T::of(nu as f64)
}

pub fn total_reward<T: Scalar>(cfg: &RewardConfig, r_e: T, r_u: T) -> T {
    T::of(cfg.alpha) * r_e + T::of(cfg.delta) * r_u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpHyper;
    use crate::world::Yaw;

    fn acts() -> Vec<Action> {
        vec![
            Action::new([0.2, 0.2, 0.2], Yaw::new(0).unwrap()),
            Action::new([0.3, 0.2, 0.25], Yaw::new(1).unwrap()),
            Action::new([0.6, 0.5, 0.4], Yaw::new(3).unwrap()),
        ]
    }

    #[test]
    fn no_new_samples_gives_zero() {
        let mut gp = GpModel::<f64>::new(GpHyper::default(), 64);
        gp.add_sample(acts()[0], 0.2);
        assert_eq!(exploration_reward(&acts(), &gp, &gp.clone()).unwrap(), 0.0);
    }

    #[test]
    fn samples_on_every_candidate_collapse_the_trace() {
        let h = GpHyper { noise_variance: 1e-10, ..GpHyper::<f64>::default() };
        let before = GpModel::new(h, 64);
        let mut after = before.clone();
        for a in acts() {
            after.add_sample(a, 0.1);
        }
        let r = exploration_reward(&acts(), &before, &after).unwrap();
        assert!((r - 1.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_trace_is_reported() {
        assert!(matches!(trace_reduction(0.0, 0.0), Err(RewardError::DegenerateTrace(_))));
        assert!(matches!(trace_reduction(1e-13, 0.0), Err(RewardError::DegenerateTrace(_))));
    }

    #[test]
    fn weighted_sum() {
        let cfg = RewardConfig::default();
        let r = total_reward(&cfg, 0.3, information_reward::<f64>(20));
        assert!((r - 0.5).abs() < 1e-15);
        let explore = RewardConfig { alpha: 1.0, delta: 0.0 };
        assert_eq!(total_reward(&explore, 0.3, 20.0), 0.3);
        let count = RewardConfig { alpha: 0.0, delta: 1.0 };
        assert_eq!(total_reward(&count, 0.3, 12.0), 12.0);
        assert_eq!(information_reward::<f64>(0), 0.0);
        assert_eq!(information_reward::<f64>(12), 12.0);
    }
}
