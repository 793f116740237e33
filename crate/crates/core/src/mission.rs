//! One planning mission: belief, GP, per-step graph and reward bookkeeping.
//!
//! Both training rollouts and evaluation episodes drive a [`Mission`]:
//! build the graph, pick a node, step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyngraph::{DynGraph, GraphConfig};
use crate::gp::{ucb_select, GpError, GpHyper, GpModel};
use crate::nnpolicy::PolicyObs;
use crate::reward::{information_reward, total_reward, trace_reduction, RewardConfig, RewardError};
use crate::world::{Action, BeliefState, MotionConfig, SensorModel, World, WorldError};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("node {0} is not a budget-feasible action")]
    Infeasible(usize),
    #[error("no graph has been built for the current step")]
    NoGraph,
}

/// Everything that shapes a mission apart from the world and the budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionConfig {
    pub sensor: SensorModel,
    pub motion: MotionConfig,
    pub graph: GraphConfig,
    pub gp: GpHyper<f64>,
    pub gp_max_samples: usize,
    /// UCB width `β`.
    pub ucb_beta: f64,
    /// UCB threshold `μ_th`.
    pub mu_th: f64,
    pub reward: RewardConfig,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            sensor: SensorModel::default(),
            motion: MotionConfig::default(),
            graph: GraphConfig::default(),
            gp: GpHyper::default(),
            gp_max_samples: 1024,
            ucb_beta: 1.0,
            mu_th: 0.4,
            reward: RewardConfig::default(),
        }
    }
}

/// What one executed action produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome<T> {
    pub action: Action,
    pub cost: f64,
    /// Newly discovered targets.
    pub nu: usize,
    /// Relative trace reduction over the UCB set.
    pub r_e: T,
    pub reward: T,
    pub terminal: bool,
}

pub struct Mission<'w, T> {
    world: &'w World,
    cfg: MissionConfig,
    belief: BeliefState,
    gp: GpModel<T>,
    rng: ChaCha8Rng,
    graph: Option<DynGraph<T>>,
}

impl<'w, T: Scalar> Mission<'w, T> {
    /// Starts at `[0, 0, 0, π/2]`, sweeps all yaws for free and seeds the GP.
    /// `seed` drives candidate sampling only.
    pub fn new(world: &'w World, cfg: MissionConfig, budget: f64, seed: u64) -> Self {
        let mut belief = BeliefState::new(world, Action::start(), budget, cfg.sensor, cfg.motion);
        let mut gp = GpModel::new(cfg.gp.cast(), cfg.gp_max_samples);
        for obs in belief.bootstrap(world) {
            gp.add_sample(obs.pose, T::of(obs.utility));
        }
        Self { world, cfg, belief, gp, rng: ChaCha8Rng::seed_from_u64(seed), graph: None }
    }

    pub fn world(&self) -> &World {
        self.world
    }

    pub fn config(&self) -> &MissionConfig {
        &self.cfg
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn gp(&self) -> &GpModel<T> {
        &self.gp
    }

    pub fn graph(&self) -> Option<&DynGraph<T>> {
        self.graph.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.belief.is_terminal()
    }

    /// Samples a fresh graph around the robot.
    pub fn build_graph(&mut self) -> Result<&DynGraph<T>, MissionError> {
        let cur = self.belief.current();
        let g = DynGraph::build(&self.belief, &cur, &self.gp, &self.cfg.graph, self.cfg.motion.yaw_cost, &mut self.rng)?;
        Ok(self.graph.insert(g))
    }

    /// Policy input for the current graph.
    pub fn observation(&self) -> Result<PolicyObs<T>, MissionError> {
        let g = self.graph.as_ref().ok_or(MissionError::NoGraph)?;
        Ok(PolicyObs::from_graph(g, self.belief.budget_remaining(), self.cfg.mu_th))
    }

    /// Indices of the UCB set over the current graph under the pre-step GP.
    pub fn ucb_set(&self) -> Result<Vec<usize>, MissionError> {
        let g = self.graph.as_ref().ok_or(MissionError::NoGraph)?;
        let means: Vec<T> = g.features().iter().map(|f| f[4]).collect();
        let vars: Vec<T> = g.features().iter().map(|f| f[5]).collect();
        let picked = ucb_select(&means, &vars, T::of(self.cfg.ucb_beta), T::of(self.cfg.mu_th));
        Ok(if picked.is_empty() { (0..g.len()).collect() } else { picked })
    }

    /// Executes node `node` of the current graph and scores the step.
    pub fn step(&mut self, node: usize) -> Result<StepOutcome<T>, MissionError> {
        let a_hat_idx = self.ucb_set()?;
        let g = self.graph.as_ref().ok_or(MissionError::NoGraph)?;
        if !g.feasible_mask(self.belief.budget_remaining()).get(node).copied().unwrap_or(false) {
            return Err(MissionError::Infeasible(node));
        }
        let target = *g.node(node);
        let a_hat: Vec<Action> = a_hat_idx.iter().map(|&i| *g.node(i)).collect();
        let tr_before: T = a_hat_idx.iter().map(|&i| g.features()[i][5]).sum();

        let from = self.belief.current();
        let out = self.belief.step_transition(self.world, from, target)?;
        for o in &out.observations {
            self.gp.add_sample(o.pose, T::of(o.utility));
        }
        let tr_after: T = self.gp.posterior_mean_var(&a_hat)?.1.into_iter().sum();
        let r_e = match trace_reduction(tr_before, tr_after) {
            Ok(r) => r,
            Err(RewardError::DegenerateTrace(_)) => T::zero(),
            Err(RewardError::Gp(e)) => return Err(e.into()),
        };
        let reward = total_reward(&self.cfg.reward, r_e, information_reward(out.new_target_count));
        self.graph = None;
        Ok(StepOutcome {
            action: target,
            cost: out.cost,
            nu: out.new_target_count,
            r_e,
            reward,
            terminal: out.terminal,
        })
    }
}
