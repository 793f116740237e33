use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{PpoError, RolloutBuffer, TrainConfig};
use crate::nnpolicy::{PolicyParams, Tensor};
use crate::Scalar;

/// Learning rate after `n` optimizer steps: `lr · decay^⌊n / every⌋`.
pub fn lr_at(cfg: &TrainConfig, n: u64) -> f64 {
    cfg.lr * cfg.lr_decay.powi((n / cfg.lr_decay_every) as i32)
}

/// `clip(ρ, 1 − ε, 1 + ε)`.
pub fn clip_ratio<T: Scalar>(rho: T, eps: T) -> T {
    rho.max(T::one() - eps).min(T::one() + eps)
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ)A)`.
pub fn surrogate<T: Scalar>(rho: T, adv: T, eps: T) -> T {
    (rho * adv).min(clip_ratio(rho, eps) * adv)
}

/// Derivative of the surrogate with respect to `log π(a)`.
///
/// The unclipped branch is taken only when it is strictly smaller; on a tie the
/// clipped branch applies, whose slope is zero unless `ρ` lies strictly inside
/// the clip interval.
pub fn surrogate_grad<T: Scalar>(rho: T, adv: T, eps: T) -> T {
    let inside = rho > T::one() - eps && rho < T::one() + eps;
    if rho * adv < clip_ratio(rho, eps) * adv || inside {
        rho * adv
    } else {
        T::zero()
    }
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &PolicyParams<T>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), steps: 0 }
    }

    /// One bias-corrected step at the scheduled learning rate.
    pub fn step(&mut self, params: &mut PolicyParams<T>, grads: &[Tensor<T>], cfg: &TrainConfig) {
        let lr = T::of(lr_at(cfg, self.steps));
        self.steps += 1;
        let (b1, b2) = (T::of(cfg.adam_beta1), T::of(cfg.adam_beta2));
        let c1 = T::one() - b1.powi(self.steps as i32);
        let c2 = T::one() - b2.powi(self.steps as i32);
        let eps = T::of(cfg.adam_eps);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Means over every minibatch sample seen during an update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    /// Learning rate for the next optimizer step.
    pub lr: f64,
    pub optimizer_steps: u64,
}

struct SampleTerms<T> {
    grads: Vec<Tensor<T>>,
    surrogate: f64,
    value_err2: f64,
    entropy: f64,
    kl: f64,
    clipped: bool,
}

/// Loss terms and parameter gradients for one stored step, unscaled by the batch size.
fn sample_terms<T: Scalar>(
    params: &PolicyParams<T>,
    step: &super::RolloutStep<T>,
    ret: T,
    adv: T,
    cfg: &TrainConfig,
) -> Result<SampleTerms<T>, PpoError> {
    let traced = params.trace(&step.obs)?;
    let logp = traced.tape.value(traced.log_probs).data().to_vec();
    let value = traced.tape.value(traced.value).data()[0];
    let eps = T::of(cfg.clip);
    let lp = logp[step.action];
    let rho = (lp - step.log_prob).exp();
    let surr = surrogate(rho, adv, eps);

    // loss = −surrogate + c_v (V − R)² − c_e H
    let mut seed_lp = vec![T::zero(); logp.len()];
    seed_lp[step.action] = -surrogate_grad(rho, adv, eps);
    let mut entropy = T::zero();
    let ce = T::of(cfg.entropy_coef);
    for (s, &l) in seed_lp.iter_mut().zip(&logp) {
        if l.is_finite() {
            let p = l.exp();
            entropy -= p * l;
            // ∂(−c_e H)/∂ log p_i = c_e p_i (log p_i + 1)
            *s += ce * p * (l + T::one());
        }
    }
    let verr = value - ret;
    let seed_v = T::of(2.0 * cfg.value_coef) * verr;

    let mut grads = params.zeros_like();
    let n = logp.len();
    traced.tape.backward(
        &[(traced.log_probs, Tensor::matrix(1, n, seed_lp)), (traced.value, Tensor::matrix(1, 1, vec![seed_v]))],
        &mut grads,
    );
    Ok(SampleTerms {
        grads,
        surrogate: surr.as_f64(),
        value_err2: (verr * verr).as_f64(),
        entropy: entropy.as_f64(),
        kl: (step.log_prob - lp).as_f64(),
        clipped: (rho - T::one()).abs() > eps,
    })
}

/// Clipped-surrogate epochs over shuffled minibatches of the buffer.
///
/// On a non-finite loss or gradient the parameters and optimizer state are
/// restored and the update is abandoned.
pub fn ppo_update<T: Scalar, R: Rng + ?Sized>(
    params: &mut PolicyParams<T>,
    adam: &mut Adam<T>,
    buffer: &RolloutBuffer<T>,
    returns: &[T],
    advantages: &[T],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    assert!(returns.len() == buffer.len() && advantages.len() == buffer.len());
    let saved = (params.clone(), adam.clone());
    let mut stats = UpdateStats::default();
    let mut seen = 0usize;
    let mut idx: Vec<usize> = (0..buffer.len()).collect();
    let result = (|| {
        for _ in 0..cfg.epochs {
            idx.shuffle(rng);
            for batch in idx.chunks(cfg.batch) {
                let terms: Vec<SampleTerms<T>> = batch
                    .par_iter()
                    .map(|&i| sample_terms(params, &buffer.steps[i], returns[i], advantages[i], cfg))
                    .collect::<Result<_, _>>()?;
                let inv = T::one() / T::of(batch.len() as f64);
                let mut grads = params.zeros_like();
                let mut loss = 0.0;
                for t in &terms {
                    for (g, s) in grads.iter_mut().zip(&t.grads) {
                        g.add_assign(s);
                    }
                    loss += -t.surrogate + cfg.value_coef * t.value_err2 - cfg.entropy_coef * t.entropy;
                    stats.policy_loss -= t.surrogate;
                    stats.value_loss += t.value_err2;
                    stats.entropy += t.entropy;
                    stats.approx_kl += t.kl;
                    stats.clip_frac += if t.clipped { 1.0 } else { 0.0 };
                }
                seen += terms.len();
                for g in &mut grads {
                    g.data_mut().iter_mut().for_each(|x| *x *= inv);
                }
                if !loss.is_finite() || !grads.iter().all(Tensor::all_finite) {
                    return Err(PpoError::NonFiniteLoss);
                }
                adam.step(params, &grads, cfg);
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        *params = saved.0;
        *adam = saved.1;
        return Err(e);
    }
    let n = seen.max(1) as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.approx_kl /= n;
    stats.clip_frac /= n;
    stats.lr = lr_at(cfg, adam.steps);
    stats.optimizer_steps = adam.steps;
    Ok(stats)
}
