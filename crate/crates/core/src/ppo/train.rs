use std::fs::{self, OpenOptions};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{collect_rollouts, gae, normalize, ppo_update, Adam, PpoError, TrainSetup};
use crate::nnpolicy::{load_params, load_tensors, save_params, save_tensors, PolicyParams, Tensor};
use crate::seed;
use crate::Scalar;

pub const PARAMS_FILE: &str = "policy.bin";
pub const ADAM_FILE: &str = "adam.bin";
pub const SIDECAR_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "train_log.csv";

const INIT_TAG: u64 = u64::MAX - 1;
const SHUFFLE_TAG: u64 = u64::MAX;

/// JSON sidecar written next to every checkpoint. All randomness of iteration
/// `i` derives from `(setup.seed, i)`, so the pair is the complete rng state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub setup: TrainSetup,
    pub iteration: u64,
    pub interactions: u64,
    pub optimizer_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub interactions: u64,
    pub iteration: u64,
    pub mean_return: f64,
    pub mean_pct_targets: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub iterations: u64,
    pub interactions: u64,
    /// Every row of the training log, including rows from before a resume.
    pub log: Vec<TrainLogRow>,
}

fn write_checkpoint<T: Scalar>(
    out: &Path,
    params: &PolicyParams<T>,
    adam: &Adam<T>,
    ck: &Checkpoint,
) -> Result<(), PpoError> {
    save_params(params, &out.join(PARAMS_FILE))?;
    let m_names: Vec<String> = params.names().iter().map(|n| format!("m.{n}")).collect();
    let v_names: Vec<String> = params.names().iter().map(|n| format!("v.{n}")).collect();
    let named: Vec<(&str, &Tensor<T>)> = m_names
        .iter()
        .map(String::as_str)
        .zip(&adam.m)
        .chain(v_names.iter().map(String::as_str).zip(&adam.v))
        .collect();
    save_tensors(&out.join(ADAM_FILE), &named)?;
    let mut json = serde_json::to_string_pretty(ck)?;
    json.push('\n');
    fs::write(out.join(SIDECAR_FILE), json)?;
    Ok(())
}

fn read_checkpoint<T: Scalar>(out: &Path) -> Result<(PolicyParams<T>, Adam<T>, Checkpoint), PpoError> {
    let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(out.join(SIDECAR_FILE))?)?;
    let params: PolicyParams<T> = load_params(&out.join(PARAMS_FILE))?;
    let moments = load_tensors::<T>(&out.join(ADAM_FILE))?;
    let n = params.names().len();
    if moments.len() != 2 * n {
        return Err(PpoError::Resume("optimizer state does not match the parameters".into()));
    }
    for (i, name) in params.names().iter().enumerate() {
        let ok = moments[i].0 == format!("m.{name}")
            && moments[n + i].0 == format!("v.{name}")
            && moments[i].1.shape() == params.tensors()[i].shape()
            && moments[n + i].1.shape() == params.tensors()[i].shape();
        if !ok {
            return Err(PpoError::Resume(format!("optimizer state for {name} is missing or misshapen")));
        }
    }
    let (m, v): (Vec<_>, Vec<_>) = moments.into_iter().map(|(_, t)| t).enumerate().partition(|(i, _)| *i < n);
    let adam = Adam {
        m: m.into_iter().map(|(_, t)| t).collect(),
        v: v.into_iter().map(|(_, t)| t).collect(),
        steps: ck.optimizer_steps,
    };
    Ok((params, adam, ck))
}

fn read_log(path: &Path) -> Result<Vec<TrainLogRow>, PpoError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

fn write_log(path: &Path, rows: &[TrainLogRow]) -> Result<(), PpoError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "interactions", "iteration", "mean_return", "mean_pct_targets", "policy_loss",
            "value_loss", "entropy", "approx_kl", "clip_frac", "lr",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn append_log(path: &Path, row: &TrainLogRow) -> Result<(), PpoError> {
    let f = OpenOptions::new().append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

/// Runs collection/update iterations until `total_interactions` executed actions
/// have been gathered, checkpointing into `out_dir`.
///
/// With `resume`, training continues from the checkpoint in `out_dir` and the
/// log is truncated to the checkpointed iteration first; the setup must match
/// the stored one apart from the interaction target and checkpoint cadence.
pub fn train<T: Scalar>(
    setup: &TrainSetup,
    out_dir: &Path,
    resume: bool,
) -> Result<(PolicyParams<T>, TrainSummary), PpoError> {
    setup.train.validate().map_err(PpoError::Resume)?;
    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    let (mut params, mut adam, mut ck, mut log) = if resume {
        let (params, adam, ck) = read_checkpoint::<T>(out_dir)?;
        let mut stored = ck.setup.clone();
        stored.train.total_interactions = setup.train.total_interactions;
        stored.train.checkpoint_every = setup.train.checkpoint_every;
        if &stored != setup {
            return Err(PpoError::Resume("configuration differs from the checkpointed run".into()));
        }
        let log: Vec<TrainLogRow> =
            read_log(&log_path)?.into_iter().filter(|r| r.iteration <= ck.iteration).collect();
        write_log(&log_path, &log)?;
        (params, adam, Checkpoint { setup: setup.clone(), ..ck }, log)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(setup.seed, &[INIT_TAG]));
        let params = PolicyParams::<T>::init(setup.net, &mut rng);
        let adam = Adam::new(&params);
        let ck = Checkpoint { setup: setup.clone(), iteration: 0, interactions: 0, optimizer_steps: 0 };
        write_checkpoint(out_dir, &params, &adam, &ck)?;
        write_log(&log_path, &[])?;
        (params, adam, ck, Vec::new())
    };

    let cfg = &setup.train;
    while (ck.interactions as usize) < cfg.total_interactions {
        let it = ck.iteration;
        let seeds: Vec<u64> = (0..cfg.n_envs as u64).map(|e| seed::derive(setup.seed, &[it, e])).collect();
        let buffer = collect_rollouts(&params, setup, &seeds)?;
        let (returns, adv) =
            gae(&buffer.rewards(), &buffer.values(), &buffer.dones(), T::of(cfg.gamma), T::of(cfg.lambda));
        let adv = normalize(&adv);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(setup.seed, &[it, SHUFFLE_TAG]));
        let stats = ppo_update(&mut params, &mut adam, &buffer, &returns, &adv, cfg, &mut rng)?;

        ck.iteration += 1;
        ck.interactions += buffer.len() as u64;
        ck.optimizer_steps = adam.steps;
        let n_ep = buffer.episodes.len() as f64;
        let row = TrainLogRow {
            interactions: ck.interactions,
            iteration: ck.iteration,
            mean_return: buffer.episodes.iter().map(|e| e.ret).sum::<f64>() / n_ep,
            mean_pct_targets: buffer.episodes.iter().map(|e| e.pct_targets).sum::<f64>() / n_ep,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_frac: stats.clip_frac,
            lr: stats.lr,
        };
        append_log(&log_path, &row)?;
        log.push(row);
        let done = ck.interactions as usize >= cfg.total_interactions;
        if done || ck.iteration % cfg.checkpoint_every as u64 == 0 {
            write_checkpoint(out_dir, &params, &adam, &ck)?;
        }
    }
    let summary = TrainSummary { iterations: ck.iteration, interactions: ck.interactions, log };
    Ok((params, summary))
}
