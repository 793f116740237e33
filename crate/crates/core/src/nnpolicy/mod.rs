//! Small tensor core with reverse-mode differentiation and the attention
//! actor-critic built on it.

mod checkpoint;
mod network;
mod tape;
mod tensor;

use rand::Rng;
use thiserror::Error;

use crate::Scalar;

pub use checkpoint::{decode, encode, load_params, load_tensors, save_params, save_tensors, MAGIC};
pub use network::{NetConfig, PolicyObs, PolicyOutput, PolicyParams, Traced, N_STATE_SCALARS, POINTER_CLIP};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("every action is outside the remaining budget")]
    AllMasked,
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

/// Draws an index from `probs`; zero-probability entries are never returned.
pub fn sample_action<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> (usize, T) {
    let u = T::of(rng.random::<f64>());
    let mut acc = T::zero();
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= T::zero() {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return (i, p.ln());
        }
    }
    // rounding left the cumulative sum just below u
    let i = last.expect("distribution has positive mass");
    (i, probs[i].ln())
}

/// Most probable index; ties go to the lowest index.
pub fn argmax_action<T: Scalar>(probs: &[T]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
