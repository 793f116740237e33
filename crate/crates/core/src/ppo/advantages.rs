use crate::Scalar;

/// Generalised advantage estimation over complete episodes.
///
/// `dones[t]` marks the last step of an episode; the value beyond it is zero.
/// Returns `(returns, advantages)` with `returns = advantages + values`.
pub fn gae<T: Scalar>(rewards: &[T], values: &[T], dones: &[bool], gamma: T, lambda: T) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n);
    let mut adv = vec![T::zero(); n];
    let mut next_adv = T::zero();
    let mut next_value = T::zero();
    for t in (0..n).rev() {
        if dones[t] {
            next_adv = T::zero();
            next_value = T::zero();
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    (returns, adv)
}

/// Shifts and scales to zero mean and unit variance; a constant input is only centred.
pub fn normalize<T: Scalar>(x: &[T]) -> Vec<T> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = var.sqrt();
    x.iter()
        .map(|&v| if std > T::of(1e-12) { (v - mean) / std } else { v - mean })
        .collect()
}
