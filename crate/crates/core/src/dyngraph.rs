//! Per-step local action graph over collision-free candidate poses.
//!
//! Every step samples K positions in the known-free neighbourhood of the robot,
//! pairs each with all four yaws, and attaches GP mean and variance as node
//! features. Node 0's position is always the robot's own position so that
//! in-place rotations stay available.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gp::{GpError, GpModel};
use crate::world::{Action, BeliefState, Cell, Yaw, N_YAWS};
use crate::Scalar;

/// Feature columns of a node row: `[x, y, z, d_norm, mean, variance]`.
pub const N_FEATURES: usize = 6;

const DRAWS_PER_CANDIDATE: usize = 200;
const MAX_HALVINGS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Sampled positions per graph.
    pub k: usize,
    /// Half-width of the axis-aligned sampling cube around the robot.
    pub neighbourhood: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { k: 20, neighbourhood: 0.4 }
    }
}

impl GraphConfig {
    pub fn n_nodes(&self) -> usize {
        self.k * N_YAWS
    }
}

/// `‖pos_i − pos_j‖ + C_s·[d_i ≠ d_j]`.
pub fn edge_cost(a: &Action, b: &Action, yaw_cost: f64) -> f64 {
    a.transition_cost(b, yaw_cost)
}

/// True iff the straight segment crosses only known-free voxels.
pub fn reachable(belief: &BeliefState, from: [f64; 3], to: [f64; 3]) -> bool {
    belief.reachable(from, to)
}

/// Draws `k` known-free, straight-line reachable positions around `current`.
///
/// Rejection sampling gets `200·k` draws per round; the cube is halved after a
/// round that comes up short (at most three times). Positions found in earlier
/// rounds are kept, and any shortfall after the last round is filled with the
/// current position.
pub fn sample_candidates<R: Rng + ?Sized>(
    belief: &BeliefState,
    current: &Action,
    k: usize,
    half_width: f64,
    rng: &mut R,
) -> Vec<[f64; 3]> {
    assert!(k >= 1 && half_width > 0.0);
    let occ = belief.occupancy();
    let mut out = Vec::with_capacity(k);
    let mut c = half_width;
    for _ in 0..=MAX_HALVINGS {
        let lo = current.pos.map(|x| (x - c).max(0.0));
        let hi = current.pos.map(|x| (x + c).min(1.0));
        let mut draws = 0;
        while out.len() < k && draws < DRAWS_PER_CANDIDATE * k {
            draws += 1;
            let p = [0, 1, 2].map(|a| rng.random_range(lo[a]..=hi[a]));
            if occ.get(occ.voxel_of(p)) == Cell::Free && belief.reachable(current.pos, p) {
                out.push(p);
            }
        }
        if out.len() == k {
            return out;
        }
        c *= 0.5;
    }
    out.resize(k, current.pos);
    out
}

/// Fully connected local graph of `L = K·|D|` candidate actions.
#[derive(Clone, Debug, PartialEq)]
pub struct DynGraph<T> {
    nodes: Vec<Action>,
    features: Vec<[T; N_FEATURES]>,
    edge_costs: Vec<f64>,
    current_index: usize,
}

impl<T: Scalar> DynGraph<T> {
    /// Assembles a graph from explicit positions; the GP is queried once for all nodes.
    pub fn from_positions(
        positions: &[[f64; 3]],
        current: &Action,
        gp: &GpModel<T>,
        yaw_cost: f64,
    ) -> Result<Self, GpError> {
        let nodes: Vec<Action> = positions
            .iter()
            .flat_map(|&p| Yaw::ALL.map(|y| Action::new(p, y)))
            .collect();
        let (means, vars) = gp.posterior_mean_var(&nodes)?;
        let features = nodes
            .iter()
            .zip(means.iter().zip(&vars))
            .map(|(a, (&m, &v))| {
                [T::of(a.pos[0]), T::of(a.pos[1]), T::of(a.pos[2]), T::of(a.yaw.normalized()), m, v]
            })
            .collect();
        let l = nodes.len();
        let mut edge_costs = vec![0.0; l * l];
        for i in 0..l {
            for j in 0..i {
                let c = edge_cost(&nodes[i], &nodes[j], yaw_cost);
                edge_costs[i * l + j] = c;
                edge_costs[j * l + i] = c;
            }
        }
        let current_index = nodes
            .iter()
            .position(|n| n == current)
            .unwrap_or(usize::MAX);
        Ok(Self { nodes, features, edge_costs, current_index })
    }

    /// Samples `K − 1` neighbours, puts the current position first, and builds the graph.
    pub fn build<R: Rng + ?Sized>(
        belief: &BeliefState,
        current: &Action,
        gp: &GpModel<T>,
        cfg: &GraphConfig,
        yaw_cost: f64,
        rng: &mut R,
    ) -> Result<Self, GpError> {
        let mut positions = vec![current.pos];
        if cfg.k > 1 {
            positions.extend(sample_candidates(belief, current, cfg.k - 1, cfg.neighbourhood, rng));
        }
        Self::from_positions(&positions, current, gp, yaw_cost)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Action] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Action {
        &self.nodes[i]
    }

    /// Row-major `L×6` feature matrix `M_t`.
    pub fn features(&self) -> &[[T; N_FEATURES]] {
        &self.features
    }

    pub fn edge_cost(&self, i: usize, j: usize) -> f64 {
        self.edge_costs[i * self.nodes.len() + j]
    }

    /// Index of the node equal to the robot's pose.
    pub fn current_index(&self) -> usize {
        self.current_index
    }

    /// Costs of moving from the robot's pose to every node.
    pub fn costs_from_current(&self) -> &[f64] {
        let l = self.nodes.len();
        &self.edge_costs[self.current_index * l..(self.current_index + 1) * l]
    }

    /// Nodes the robot may move to: positive cost (not a no-op) within `budget`.
    pub fn feasible_mask(&self, budget: f64) -> Vec<bool> {
        budget_mask(self.costs_from_current(), budget)
    }
}

/// Feasibility of each node given its cost from the current pose.
///
/// Zero-cost nodes are the current pose itself; choosing one would spend a
/// step without moving or observing anything new, so they are masked too.
pub fn budget_mask(costs: &[f64], budget: f64) -> Vec<bool> {
    costs.iter().map(|&c| c > 0.0 && c <= budget).collect()
}
