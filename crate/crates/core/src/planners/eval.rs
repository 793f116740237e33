//! Evaluation protocol: every planner flies the same worlds and trial seeds.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_episode, EpisodeLog, GreedyUcbPlanner, Planner, PolicyPlanner, RandomPlanner};
use crate::mission::MissionConfig;
use crate::nnpolicy::PolicyParams;
use crate::seed;
use crate::world::World;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Random,
    Greedy,
    Policy,
}

impl PlannerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Random => "random",
            PlannerKind::Greedy => "greedy",
            PlannerKind::Policy => "policy",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(PlannerKind::Random),
            "greedy" => Ok(PlannerKind::Greedy),
            "policy" => Ok(PlannerKind::Policy),
            _ => Err(format!("unknown planner {s:?} (expected random, greedy or policy)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_worlds: usize,
    pub trials: usize,
    pub budget: f64,
    /// World `i` is generated from `world_seed + i`.
    pub world_seed: u64,
    /// Base of the per-trial candidate-sampling and planner streams.
    pub trial_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_worlds: 25, trials: 20, budget: 10.0, world_seed: 1000, trial_seed: 2000 }
    }
}

/// One per-step CSV record; step 0 is the state after the start sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub run_id: usize,
    pub planner: String,
    pub world_seed: u64,
    pub trial: usize,
    pub step: usize,
    pub budget_used: f64,
    pub pct_targets: f64,
    pub replan_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub planner: String,
    pub mean_pct_targets: f64,
    pub std: f64,
    /// Mean graph-build plus planner time per step, milliseconds.
    pub mean_replan_time: f64,
}

/// Runs `trials` episodes on each world and returns the episode logs in
/// `(world, trial)` order together with their per-step rows.
pub fn evaluate<T: Scalar>(
    kind: PlannerKind,
    params: Option<&PolicyParams<T>>,
    worlds: &[World],
    cfg: &EvalConfig,
    mission: &MissionConfig,
) -> (Vec<EpisodeLog>, Vec<EvalRow>) {
    assert!(kind != PlannerKind::Policy || params.is_some(), "policy planner needs parameters");
    let jobs: Vec<(usize, usize)> =
        (0..worlds.len()).flat_map(|w| (0..cfg.trials).map(move |t| (w, t))).collect();
    let logs: Vec<EpisodeLog> = jobs
        .par_iter()
        .map(|&(w, t)| {
            let mission_seed = seed::derive(cfg.trial_seed, &[w as u64, t as u64, 0]);
            let planner_seed = seed::derive(cfg.trial_seed, &[w as u64, t as u64, 1]);
            let mut planner: Box<dyn Planner<T> + '_> = match kind {
                PlannerKind::Random => Box::new(RandomPlanner::new(planner_seed)),
                PlannerKind::Greedy => Box::new(GreedyUcbPlanner { beta: mission.ucb_beta }),
                PlannerKind::Policy => Box::new(PolicyPlanner { params: params.unwrap() }),
            };
            run_episode(planner.as_mut(), &worlds[w], cfg.budget, mission, mission_seed)
        })
        .collect();
    let mut rows = Vec::new();
    for (run_id, (&(w, t), log)) in jobs.iter().zip(&logs).enumerate() {
        let base = EvalRow {
            run_id,
            planner: kind.to_string(),
            world_seed: worlds[w].seed,
            trial: t,
            step: 0,
            budget_used: 0.0,
            pct_targets: log.initial_pct_targets,
            replan_time_ms: 0.0,
        };
        rows.push(base.clone());
        for (i, s) in log.steps.iter().enumerate() {
            rows.push(EvalRow {
                step: i + 1,
                budget_used: s.budget_used,
                pct_targets: s.pct_targets,
                replan_time_ms: s.replan_time_ms,
                ..base.clone()
            });
        }
    }
    (logs, rows)
}

/// Aggregates per-step rows: final coverage of each episode (its last row) and
/// the mean replanning time over every executed step.
pub fn summarize(rows: &[EvalRow]) -> Vec<EvalSummary> {
    let mut planners: Vec<&str> = Vec::new();
    for r in rows {
        if !planners.contains(&r.planner.as_str()) {
            planners.push(&r.planner);
        }
    }
    planners
        .into_iter()
        .map(|p| {
            let mine: Vec<&EvalRow> = rows.iter().filter(|r| r.planner == p).collect();
            let mut finals: Vec<f64> = Vec::new();
            for (i, r) in mine.iter().enumerate() {
                if mine.get(i + 1).is_none_or(|n| n.run_id != r.run_id) {
                    finals.push(r.pct_targets);
                }
            }
            let n = finals.len() as f64;
            let mean = finals.iter().sum::<f64>() / n;
            let std = (finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let times: Vec<f64> = mine.iter().filter(|r| r.step > 0).map(|r| r.replan_time_ms).collect();
            let mean_replan_time =
                if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 };
            EvalSummary { planner: p.to_string(), mean_pct_targets: mean, std, mean_replan_time }
        })
        .collect()
}

/// Writes serializable records as a headed CSV file.
pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headed CSV file written by [`write_csv`].
pub fn read_csv<S: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<S>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{GenMode, WorldGenConfig};

    #[test]
    fn planner_names_parse() {
        for k in [PlannerKind::Random, PlannerKind::Greedy, PlannerKind::Policy] {
            assert_eq!(k.as_str().parse::<PlannerKind>().unwrap(), k);
        }
        assert!("mcts".parse::<PlannerKind>().is_err());
    }

    #[test]
    fn two_worlds_two_trials() {
        let gen = WorldGenConfig::default().with_mode(GenMode::Random);
        let worlds: Vec<World> = (0..2).map(|s| World::generate(&gen, s).unwrap()).collect();
        let cfg = EvalConfig { n_worlds: 2, trials: 2, budget: 2.0, ..EvalConfig::default() };
        let (logs, rows) = evaluate::<f64>(PlannerKind::Random, None, &worlds, &cfg, &MissionConfig::default());
        assert_eq!(logs.len(), 4);
        let ids: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.run_id).collect();
        assert_eq!(ids.len(), 4);
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        let direct = logs.iter().map(|l| l.pct_targets).sum::<f64>() / 4.0;
        assert!((s[0].mean_pct_targets - direct).abs() < 1e-12);
    }
}
