use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{PpoError, TrainSetup};
use crate::mission::Mission;
use crate::nnpolicy::{sample_action, PolicyError, PolicyObs, PolicyParams};
use crate::seed;
use crate::world::World;
use crate::Scalar;

/// One decision recorded during collection.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep<T> {
    pub obs: PolicyObs<T>,
    pub action: usize,
    pub log_prob: T,
    pub value: T,
    pub reward: T,
    /// Last step of its episode.
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStats {
    pub ret: f64,
    pub pct_targets: f64,
    pub steps: usize,
    pub budget: f64,
}

/// Complete episodes generated under one parameter set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer<T> {
    pub steps: Vec<RolloutStep<T>>,
    pub episodes: Vec<EpisodeStats>,
}

impl<T: Scalar> RolloutBuffer<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<T> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<T> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.done).collect()
    }
}

/// Runs one training episode on a grid-mode world; everything random derives from `seed`.
pub fn run_training_episode<T: Scalar>(
    params: &PolicyParams<T>,
    setup: &TrainSetup,
    seed: u64,
) -> Result<(Vec<RolloutStep<T>>, EpisodeStats), PpoError> {
    let world_cfg = setup.world.clone().with_mode(setup.train.world_mode);
    let world = World::generate(&world_cfg, seed::derive(seed, &[0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[1]));
    let [lo, hi] = setup.train.budget_range;
    let budget = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut mission = Mission::<T>::new(&world, setup.mission.clone(), budget, seed::derive(seed, &[2]));
    let mut steps: Vec<RolloutStep<T>> = Vec::new();
    let mut ret = 0.0;
    while !mission.is_done() {
        mission.build_graph()?;
        let obs = mission.observation()?;
        let out = match params.forward(&obs) {
            Ok(o) => o,
            Err(PolicyError::AllMasked) => break,
            Err(e) => return Err(e.into()),
        };
        let (action, log_prob) = sample_action(&out.probs, &mut rng);
        let step = mission.step(action)?;
        ret += step.reward.as_f64();
        steps.push(RolloutStep { obs, action, log_prob, value: out.value, reward: step.reward, done: false });
    }
    if let Some(last) = steps.last_mut() {
        last.done = true;
    }
    let stats = EpisodeStats {
        ret,
        pct_targets: 100.0 * mission.belief().discovered_fraction(),
        steps: steps.len(),
        budget,
    };
    Ok((steps, stats))
}

/// One episode per seed, run concurrently and merged in seed order.
pub fn collect_rollouts<T: Scalar>(
    params: &PolicyParams<T>,
    setup: &TrainSetup,
    seeds: &[u64],
) -> Result<RolloutBuffer<T>, PpoError> {
    let episodes: Vec<_> = seeds
        .par_iter()
        .map(|&s| run_training_episode(params, setup, s))
        .collect::<Result<_, _>>()?;
    let mut buf = RolloutBuffer::default();
    for (steps, stats) in episodes {
        buf.steps.extend(steps);
        buf.episodes.push(stats);
    }
    Ok(buf)
}
