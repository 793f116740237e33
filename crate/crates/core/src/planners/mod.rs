//! Planner interface, the episode runner, and the evaluation protocol.

mod eval;

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dyngraph::DynGraph;
use crate::mission::{Mission, MissionConfig, MissionError};
use crate::nnpolicy::{argmax_action, PolicyError, PolicyObs, PolicyParams};
use crate::world::{Action, World};
use crate::Scalar;

pub use eval::{evaluate, read_csv, summarize, write_csv, EvalConfig, EvalRow, EvalSummary, PlannerKind};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("every action is outside the remaining budget")]
    AllMasked,
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Policy(PolicyError),
}

impl From<PolicyError> for PlanError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::AllMasked => PlanError::AllMasked,
            other => PlanError::Policy(other),
        }
    }
}

/// Chooses one node of the current graph.
pub trait Planner<T: Scalar> {
    fn name(&self) -> &str;
    fn plan(&mut self, graph: &DynGraph<T>, obs: &PolicyObs<T>) -> Result<usize, PlanError>;
}

/// Uniform choice among feasible nodes.
pub fn plan_random<R: Rng + ?Sized>(mask: &[bool], rng: &mut R) -> Result<usize, PlanError> {
    let feasible: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if feasible.is_empty() {
        return Err(PlanError::AllMasked);
    }
    Ok(feasible[rng.random_range(0..feasible.len())])
}

/// Feasible node maximising `mean + β·variance`; ties go to the lowest index.
pub fn plan_greedy_ucb<T: Scalar>(obs: &PolicyObs<T>, beta: T) -> Result<usize, PlanError> {
    let mut best: Option<(usize, T)> = None;
    for (i, f) in obs.features.iter().enumerate() {
        if !obs.mask[i] {
            continue;
        }
        let score = f[4] + beta * f[5];
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i).ok_or(PlanError::AllMasked)
}

/// Most probable action under the policy.
pub fn plan_policy<T: Scalar>(params: &PolicyParams<T>, obs: &PolicyObs<T>) -> Result<usize, PlanError> {
    Ok(argmax_action(&params.forward(obs)?.probs))
}

pub struct RandomPlanner {
    rng: ChaCha8Rng,
}

impl RandomPlanner {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl<T: Scalar> Planner<T> for RandomPlanner {
    fn name(&self) -> &str {
        "random"
    }

    fn plan(&mut self, _: &DynGraph<T>, obs: &PolicyObs<T>) -> Result<usize, PlanError> {
        plan_random(&obs.mask, &mut self.rng)
    }
}

pub struct GreedyUcbPlanner {
    pub beta: f64,
}

impl<T: Scalar> Planner<T> for GreedyUcbPlanner {
    fn name(&self) -> &str {
        "greedy"
    }

    fn plan(&mut self, _: &DynGraph<T>, obs: &PolicyObs<T>) -> Result<usize, PlanError> {
        plan_greedy_ucb(obs, T::of(self.beta))
    }
}

pub struct PolicyPlanner<'p, T> {
    pub params: &'p PolicyParams<T>,
}

impl<T: Scalar> Planner<T> for PolicyPlanner<'_, T> {
    fn name(&self) -> &str {
        "policy"
    }

    fn plan(&mut self, _: &DynGraph<T>, obs: &PolicyObs<T>) -> Result<usize, PlanError> {
        plan_policy(self.params, obs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub action: Action,
    pub cost: f64,
    pub nu: usize,
    /// Cumulative percentage of targets discovered after this step.
    pub pct_targets: f64,
    pub budget_used: f64,
    /// Graph construction plus the planner call, in milliseconds.
    pub replan_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    /// Percentage of targets found by the start sweep alone.
    pub initial_pct_targets: f64,
    pub steps: Vec<StepLog>,
    pub pct_targets: f64,
    pub wall_time_s: f64,
    /// The full executed path including the start pose.
    pub path: Vec<Action>,
    pub discovered: Vec<usize>,
    /// Set when the episode ended on an error rather than a normal stop.
    pub abnormal: Option<String>,
}

/// Flies one mission with `planner` until the budget or step cap runs out.
///
/// `seed` drives candidate sampling; planner randomness is owned by the planner.
pub fn run_episode<T: Scalar>(
    planner: &mut dyn Planner<T>,
    world: &World,
    budget: f64,
    cfg: &MissionConfig,
    seed: u64,
) -> EpisodeLog {
    assert!(budget > 0.0);
    let start = Instant::now();
    let mut mission = Mission::<T>::new(world, cfg.clone(), budget, seed);
    let initial_pct_targets = 100.0 * mission.belief().discovered_fraction();
    let mut steps = Vec::new();
    let mut abnormal = None;
    while !mission.is_done() {
        let t0 = Instant::now();
        let choice = mission
            .build_graph()
            .map(|_| ())
            .and_then(|_| mission.observation())
            .map_err(PlanError::from)
            .and_then(|obs| planner.plan(mission.graph().unwrap(), &obs));
        let replan_time_ms = t0.elapsed().as_secs_f64() * 1e3;
        let node = match choice {
            Ok(n) => n,
            Err(PlanError::AllMasked) => break,
            Err(e) => {
                abnormal = Some(e.to_string());
                break;
            }
        };
        match mission.step(node) {
            Ok(out) => steps.push(StepLog {
                action: out.action,
                cost: out.cost,
                nu: out.nu,
                pct_targets: 100.0 * mission.belief().discovered_fraction(),
                budget_used: mission.belief().budget_spent(),
                replan_time_ms,
            }),
            Err(e) => {
                abnormal = Some(e.to_string());
                break;
            }
        }
    }
    let b = mission.belief();
    EpisodeLog {
        initial_pct_targets,
        steps,
        pct_targets: 100.0 * b.discovered_fraction(),
        wall_time_s: start.elapsed().as_secs_f64(),
        path: b.path().to_vec(),
        discovered: b.discovered_ids(),
        abnormal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyngraph::N_FEATURES;
    use crate::world::{GenMode, WorldGenConfig};

    fn obs_with(features: Vec<[f64; N_FEATURES]>, mask: Vec<bool>) -> PolicyObs<f64> {
        PolicyObs { features, current_index: 0, budget: 5.0, mu_th: 0.4, mask }
    }

    #[test]
    fn random_respects_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mask = vec![false, false, true, false];
        assert_eq!(plan_random(&mask, &mut rng).unwrap(), 2);
        let mask: Vec<bool> = (0..80).map(|i| i % 3 == 0).collect();
        for _ in 0..10_000 {
            assert!(mask[plan_random(&mask, &mut rng).unwrap()]);
        }
        assert!(matches!(plan_random(&[false; 3], &mut rng), Err(PlanError::AllMasked)));
    }

    #[test]
    fn greedy_picks_dominant_and_breaks_ties_low() {
        let f = |m: f64, v: f64| [0.0, 0.0, 0.0, 0.0, m, v];
        let o = obs_with(vec![f(0.1, 0.1), f(0.5, 0.4), f(0.2, 0.3)], vec![true; 3]);
        assert_eq!(plan_greedy_ucb(&o, 1.0).unwrap(), 1);
        let o = obs_with(vec![f(0.2, 0.2); 4], vec![true; 4]);
        assert_eq!(plan_greedy_ucb(&o, 1.0).unwrap(), 0);
        let o = obs_with(vec![f(0.9, 0.9), f(0.2, 0.2)], vec![false, true]);
        assert_eq!(plan_greedy_ucb(&o, 1.0).unwrap(), 1);
    }

    #[test]
    fn tiny_budget_runs_no_steps() {
        let w = World::generate(&WorldGenConfig::default().with_mode(GenMode::Random), 0).unwrap();
        let mut p = RandomPlanner::new(0);
        let log = run_episode::<f64>(&mut p, &w, 0.05, &MissionConfig::default(), 0);
        assert!(log.steps.is_empty());
        assert!(log.abnormal.is_none());
        assert_eq!(log.pct_targets, log.initial_pct_targets);
    }

    #[test]
    fn episode_log_is_consistent() {
        let w = World::generate(&WorldGenConfig::default().with_mode(GenMode::Random), 1).unwrap();
        let mut p = GreedyUcbPlanner { beta: 1.0 };
        let log = run_episode::<f64>(&mut p, &w, 4.0, &MissionConfig::default(), 3);
        assert!(log.abnormal.is_none());
        assert!(!log.steps.is_empty());
        let mut prev = (log.initial_pct_targets, 0.0);
        for s in &log.steps {
            assert!(s.pct_targets >= prev.0 && s.budget_used >= prev.1);
            assert!(s.budget_used <= 4.0 + 1e-12);
            prev = (s.pct_targets, s.budget_used);
        }
        let spent: f64 = log.steps.iter().map(|s| s.cost).sum();
        assert!((spent - log.steps.last().unwrap().budget_used).abs() < 1e-9);
        assert_eq!(log.path.len(), log.steps.len() + 1);
    }
}
