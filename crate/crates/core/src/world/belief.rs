use serde::{Deserialize, Serialize};

use super::{Action, Cell, CellSet, SensorModel, VoxelGrid, World, WorldError, Yaw};

/// Motion and observation cadence shared by every mission.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    /// Travel distance between consecutive observations along a segment.
    pub obs_interval: f64,
    /// Constant added to a transition's cost when the yaw changes.
    pub yaw_cost: f64,
    /// Maximum number of executed transitions per mission.
    pub max_steps: usize,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self { obs_interval: 0.2, yaw_cost: 0.1, max_steps: 256 }
    }
}

/// One fused observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    pub pose: Action,
    pub utility: f64,
    pub new_targets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionOutcome {
    pub observations: Vec<ObservationRecord>,
    /// Targets discovered for the first time during this transition.
    pub new_target_count: usize,
    pub cost: f64,
    pub terminal: bool,
}

/// What the robot knows: ternary occupancy, discovered targets, GP training
/// samples, executed path and remaining budget.
#[derive(Clone, Debug)]
pub struct BeliefState {
    occ: VoxelGrid,
    discovered: Vec<bool>,
    n_discovered: usize,
    gp_samples: Vec<(Action, f64)>,
    path: Vec<Action>,
    initial_budget: f64,
    budget_remaining: f64,
    spent: f64,
    step_count: usize,
    sensor: SensorModel,
    motion: MotionConfig,
}

impl BeliefState {
    /// All-unknown belief at `start` with the full budget available.
    pub fn new(world: &World, start: Action, budget: f64, sensor: SensorModel, motion: MotionConfig) -> Self {
        Self {
            occ: VoxelGrid::new(world.grid().resolution(), Cell::Unknown),
            discovered: vec![false; world.n_targets()],
            n_discovered: 0,
            gp_samples: Vec::new(),
            path: vec![start],
            initial_budget: budget,
            budget_remaining: budget,
            spent: 0.0,
            step_count: 0,
            sensor,
            motion,
        }
    }

    pub fn occupancy(&self) -> &VoxelGrid {
        &self.occ
    }

    pub fn sensor(&self) -> &SensorModel {
        &self.sensor
    }

    pub fn motion(&self) -> &MotionConfig {
        &self.motion
    }

    pub fn is_discovered(&self, id: usize) -> bool {
        self.discovered[id]
    }

    pub fn discovered_count(&self) -> usize {
        self.n_discovered
    }

    pub fn discovered_ids(&self) -> Vec<usize> {
        (0..self.discovered.len()).filter(|&i| self.discovered[i]).collect()
    }

    /// Fraction of the world's targets discovered so far.
    pub fn discovered_fraction(&self) -> f64 {
        self.n_discovered as f64 / self.discovered.len() as f64
    }

    pub fn gp_samples(&self) -> &[(Action, f64)] {
        &self.gp_samples
    }

    pub fn path(&self) -> &[Action] {
        &self.path
    }

    pub fn current(&self) -> Action {
        *self.path.last().expect("path starts with the start pose")
    }

    pub fn initial_budget(&self) -> f64 {
        self.initial_budget
    }

    pub fn budget_remaining(&self) -> f64 {
        self.budget_remaining
    }

    /// Sum of executed transition costs.
    pub fn budget_spent(&self) -> f64 {
        self.spent
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// No positive-cost transition fits in the budget, or the step cap is reached.
    pub fn is_terminal(&self) -> bool {
        self.budget_remaining < self.motion.yaw_cost || self.step_count >= self.motion.max_steps
    }

    /// Overwrites one belief voxel. Test and tooling hook; planners never call it.
    #[doc(hidden)]
    pub fn force_label(&mut self, v: super::VoxelIndex, cell: Cell) {
        self.occ.set(v, cell);
    }

    /// Straight-line reachability through known-free voxels only.
    pub fn reachable(&self, from: [f64; 3], to: [f64; 3]) -> bool {
        self.occ.ray_clear(from, to, CellSet::NOT_FREE)
    }

    /// Fuses one sensor reading taken at `pose` into the belief.
    pub fn take_observation(&mut self, world: &World, pose: Action) -> ObservationRecord {
        for (v, cell) in self.sensor.observed_voxels(world, &pose) {
            self.occ.set(v, cell);
        }
        // the robot body occupies its own voxel, which is therefore free
        let here = self.occ.voxel_of(pose.pos);
        debug_assert_eq!(world.grid().get(here), Cell::Free);
        self.occ.set(here, Cell::Free);

        let seen = self.sensor.visible_targets(world, &pose);
        let utility = seen.len() as f64 / world.n_targets() as f64;
        let mut new_targets = Vec::new();
        for id in seen {
            if !self.discovered[id] {
                self.discovered[id] = true;
                self.n_discovered += 1;
                new_targets.push(id);
            }
        }
        self.gp_samples.push((pose, utility));
        ObservationRecord { pose, utility, new_targets }
    }

    /// Free yaw sweep at the start pose, one observation per heading, ending at the
    /// start heading. Costs no budget and no step.
    pub fn bootstrap(&mut self, world: &World) -> Vec<ObservationRecord> {
        let start = self.current();
        let mut out: Vec<ObservationRecord> = Yaw::ALL
            .iter()
            .filter(|&&y| y != start.yaw)
            .map(|&y| self.take_observation(world, Action::new(start.pos, y)))
            .collect();
        out.push(self.take_observation(world, start));
        out
    }

    /// Executes `from → to` along a straight line, observing every `obs_interval` of
    /// travel and at the endpoint, all with the destination yaw.
    pub fn step_transition(
        &mut self,
        world: &World,
        from: Action,
        to: Action,
    ) -> Result<TransitionOutcome, WorldError> {
        let cost = from.transition_cost(&to, self.motion.yaw_cost);
        if cost > self.budget_remaining {
            return Err(WorldError::BudgetExceeded { cost, remaining: self.budget_remaining });
        }
        if !self.reachable(from.pos, to.pos) {
            return Err(WorldError::PathBlocked { from: from.pos, to: to.pos });
        }
        let length = from.distance(&to);
        let h = self.motion.obs_interval;
        let mut poses = Vec::new();
        let mut k = 1;
        while (k as f64) * h < length - 1e-9 {
            let t = k as f64 * h / length;
            let p = [0, 1, 2].map(|a| from.pos[a] + t * (to.pos[a] - from.pos[a]));
            poses.push(Action::new(p, to.yaw));
            k += 1;
        }
        poses.push(to);

        let observations: Vec<ObservationRecord> =
            poses.into_iter().map(|p| self.take_observation(world, p)).collect();
        let new_target_count = observations.iter().map(|o| o.new_targets.len()).sum();
        self.budget_remaining -= cost;
        self.spent += cost;
        self.step_count += 1;
        self.path.push(to);
        Ok(TransitionOutcome { observations, new_target_count, cost, terminal: self.is_terminal() })
    }
}
