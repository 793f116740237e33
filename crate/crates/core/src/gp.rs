//! Gaussian-process regression of action utility over the 4D action space.
//!
//! The kernel is Matérn 1/2 (exponential) on a distance that mixes Euclidean
//! position distance with the wrapped yaw difference. The model keeps a
//! Cholesky factor of `K(X,X) + σ_n² I` which is extended by one row per added
//! sample and downdated with a rank-1 update when the oldest sample is evicted.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::Action;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },
}

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpHyper<T> {
    pub length_scale: T,
    pub signal_variance: T,
    pub noise_variance: T,
    /// Weight of the wrapped yaw distance (normalised by π) in the kernel distance.
    pub yaw_weight: T,
}

impl<T: Scalar> Default for GpHyper<T> {
    fn default() -> Self {
        Self {
            length_scale: T::of(0.25),
            signal_variance: T::of(1.0),
            noise_variance: T::of(1e-4),
            yaw_weight: T::of(0.5),
        }
    }
}

impl<T: Scalar> GpHyper<T> {
    pub fn is_valid(&self) -> bool {
        self.length_scale > T::zero()
            && self.signal_variance > T::zero()
            && self.noise_variance >= T::zero()
            && self.yaw_weight >= T::zero()
    }

    pub fn cast<U: Scalar>(&self) -> GpHyper<U> {
        GpHyper {
            length_scale: U::of(self.length_scale.as_f64()),
            signal_variance: U::of(self.signal_variance.as_f64()),
            noise_variance: U::of(self.noise_variance.as_f64()),
            yaw_weight: U::of(self.yaw_weight.as_f64()),
        }
    }
}

/// `σ_f² · exp(−dist(a, b) / ℓ)` with
/// `dist² = ‖pos_a − pos_b‖² + (w_d · ang(d_a, d_b) / π)²`.
pub fn kernel<T: Scalar>(a: &Action, b: &Action, h: &GpHyper<T>) -> T {
    let mut d2 = T::zero();
    for ax in 0..3 {
        let d = T::of(a.pos[ax] - b.pos[ax]);
        d2 += d * d;
    }
    let yaw = h.yaw_weight * T::of(a.yaw.angle_to(b.yaw)) / T::PI();
    d2 += yaw * yaw;
    h.signal_variance * (-d2.sqrt() / h.length_scale).exp()
}

/// Lower-triangular factor stored row by row (row `i` holds `i + 1` entries).
#[derive(Clone, Debug, PartialEq)]
struct Cholesky<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> Cholesky<T> {
    fn empty() -> Self {
        Self { rows: Vec::new() }
    }

    fn factor(a: &[Vec<T>]) -> Option<Self> {
        let n = a.len();
        let mut rows: Vec<Vec<T>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = vec![T::zero(); i + 1];
            for j in 0..=i {
                let mut s = a[i][j];
                let other = if j == i { &row } else { &rows[j] };
                for k in 0..j {
                    s -= row[k] * other[k];
                }
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return None;
                    }
                    row[j] = s.sqrt();
                } else {
                    row[j] = s / rows[j][j];
                }
            }
            rows.push(row);
        }
        Some(Self { rows })
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Solves `L x = b` in place.
    fn solve_lower(&self, b: &mut [T]) {
        for (i, row) in self.rows.iter().enumerate() {
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    fn solve_upper(&self, b: &mut [T]) {
        for i in (0..self.len()).rev() {
            let xi = b[i] / self.rows[i][i];
            b[i] = xi;
            for k in 0..i {
                b[k] -= self.rows[i][k] * xi;
            }
        }
    }

    /// Appends the row for a new point with cross-covariances `cross` and
    /// diagonal entry `diag`. Returns false if the extension is not positive definite.
    fn append(&mut self, mut cross: Vec<T>, diag: T) -> bool {
        self.solve_lower(&mut cross);
        let d2 = diag - cross.iter().map(|&x| x * x).sum::<T>();
        if !(d2 > T::zero()) || !d2.is_finite() {
            return false;
        }
        cross.push(d2.sqrt());
        self.rows.push(cross);
        true
    }

    /// Drops the first point: the trailing block `A₂₂ = L₂₂L₂₂ᵀ + l₂₁l₂₁ᵀ` is
    /// refactored with a rank-1 update of `L₂₂` by `l₂₁`.
    fn remove_first(&mut self) {
        let mut x: Vec<T> = self.rows.iter().skip(1).map(|r| r[0]).collect();
        let mut rows: Vec<Vec<T>> = self.rows.drain(..).skip(1).map(|r| r[1..].to_vec()).collect();
        let n = rows.len();
        for k in 0..n {
            let lkk = rows[k][k];
            let r = (lkk * lkk + x[k] * x[k]).sqrt();
            let c = r / lkk;
            let s = x[k] / lkk;
            rows[k][k] = r;
            for i in k + 1..n {
                rows[i][k] = (rows[i][k] + s * x[i]) / c;
                x[i] = c * x[i] - s * rows[i][k];
            }
        }
        self.rows = rows;
    }

    fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.len();
        self.rows
            .iter()
            .map(|r| {
                let mut full = r.clone();
                full.resize(n, T::zero());
                full
            })
            .collect()
    }
}

/// GP posterior over action utility conditioned on past observations.
#[derive(Clone, Debug)]
pub struct GpModel<T> {
    hyper: GpHyper<T>,
    max_samples: usize,
    xs: VecDeque<Action>,
    ys: VecDeque<T>,
    jitter: T,
    factor: Result<Cholesky<T>, GpError>,
}

impl<T: Scalar> GpModel<T> {
    pub fn new(hyper: GpHyper<T>, max_samples: usize) -> Self {
        assert!(hyper.is_valid(), "invalid GP hyperparameters");
        assert!(max_samples > 0);
        Self {
            hyper,
            max_samples,
            xs: VecDeque::new(),
            ys: VecDeque::new(),
            jitter: T::zero(),
            factor: Ok(Cholesky::empty()),
        }
    }

    pub fn hyper(&self) -> &GpHyper<T> {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn max_samples(&self) -> usize {
        self.max_samples
    }

    pub fn train_x(&self) -> impl ExactSizeIterator<Item = &Action> {
        self.xs.iter()
    }

    pub fn train_y(&self) -> impl ExactSizeIterator<Item = &T> {
        self.ys.iter()
    }

    /// Diagonal jitter currently added on top of the noise variance.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    fn diag_term(&self) -> T {
        self.hyper.signal_variance + self.hyper.noise_variance + self.jitter
    }

    fn gram(&self) -> Vec<Vec<T>> {
        let n = self.xs.len();
        let d = self.hyper.noise_variance + self.jitter;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let k = kernel(&self.xs[i], &self.xs[j], &self.hyper);
                        if i == j { k + d } else { k }
                    })
                    .collect()
            })
            .collect()
    }

    /// Full refactorization, escalating the jitter ×10 from 1e-8 up to 1e-4.
    fn refactor(&mut self) {
        loop {
            if let Some(c) = Cholesky::factor(&self.gram()) {
                self.factor = Ok(c);
                return;
            }
            let next = if self.jitter == T::zero() { T::of(JITTER_START) } else { self.jitter * T::of(10.0) };
            if next.as_f64() > JITTER_MAX * (1.0 + 1e-9) {
                self.factor = Err(GpError::SingularKernel { jitter: self.jitter.as_f64() });
                return;
            }
            self.jitter = next;
        }
    }

    /// Adds one `(action, utility)` observation, evicting the oldest sample when
    /// the cap is reached.
    pub fn add_sample(&mut self, a: Action, u: T) {
        if self.xs.len() == self.max_samples {
            self.xs.pop_front();
            self.ys.pop_front();
            match &mut self.factor {
                Ok(c) => c.remove_first(),
                Err(_) => self.refactor(),
            }
        }
        let cross: Vec<T> = self.xs.iter().map(|x| kernel(x, &a, &self.hyper)).collect();
        let diag = self.diag_term();
        self.xs.push_back(a);
        self.ys.push_back(u);
        let appended = match &mut self.factor {
            Ok(c) => c.append(cross, diag),
            Err(_) => false,
        };
        if !appended {
            self.refactor();
        }
    }

    /// Dense copy of the cached lower Cholesky factor.
    pub fn factor_dense(&self) -> Result<Vec<Vec<T>>, GpError> {
        self.factor.as_ref().map(|c| c.to_dense()).map_err(Clone::clone)
    }

    /// Dense factor recomputed from scratch with the current jitter.
    pub fn refactored_dense(&self) -> Option<Vec<Vec<T>>> {
        Cholesky::factor(&self.gram()).map(|c| c.to_dense())
    }

    fn weights(&self, c: &Cholesky<T>) -> Vec<T> {
        let mut alpha: Vec<T> = self.ys.iter().copied().collect();
        c.solve_lower(&mut alpha);
        c.solve_upper(&mut alpha);
        alpha
    }

    /// Columns `L⁻¹ k(X, q)` for each query, plus the posterior means.
    fn project(&self, queries: &[Action]) -> Result<(Vec<T>, Vec<Vec<T>>), GpError> {
        let c = self.factor.as_ref().map_err(Clone::clone)?;
        let alpha = self.weights(c);
        let mut means = Vec::with_capacity(queries.len());
        let mut cols = Vec::with_capacity(queries.len());
        for q in queries {
            let mut v: Vec<T> = self.xs.iter().map(|x| kernel(x, q, &self.hyper)).collect();
            means.push(v.iter().zip(&alpha).map(|(&k, &w)| k * w).sum());
            c.solve_lower(&mut v);
            cols.push(v);
        }
        Ok((means, cols))
    }

    /// Posterior mean vector and full covariance matrix at `queries`.
    pub fn posterior(&self, queries: &[Action]) -> Result<(Vec<T>, Vec<Vec<T>>), GpError> {
        let (means, cols) = self.project(queries)?;
        let m = queries.len();
        let mut cov = vec![vec![T::zero(); m]; m];
        for i in 0..m {
            for j in 0..=i {
                let prior = kernel(&queries[i], &queries[j], &self.hyper);
                let reduce: T = cols[i].iter().zip(&cols[j]).map(|(&a, &b)| a * b).sum();
                let mut v = prior - reduce;
                if i == j {
                    v = v.max(T::zero());
                }
                cov[i][j] = v;
                cov[j][i] = v;
            }
        }
        Ok((means, cov))
    }

    /// Posterior means and marginal variances (diagonal of the covariance).
    pub fn posterior_mean_var(&self, queries: &[Action]) -> Result<(Vec<T>, Vec<T>), GpError> {
        let (means, cols) = self.project(queries)?;
        let vars = cols
            .iter()
            .map(|v| (self.hyper.signal_variance - v.iter().map(|&x| x * x).sum::<T>()).max(T::zero()))
            .collect();
        Ok((means, vars))
    }
}

/// Indices of candidates whose `mean + β·variance` reaches `mu_th`, with no fallback.
pub fn ucb_select<T: Scalar>(means: &[T], vars: &[T], beta: T, mu_th: T) -> Vec<usize> {
    means
        .iter()
        .zip(vars)
        .enumerate()
        .filter(|(_, (&m, &v))| m + beta * v >= mu_th)
        .map(|(i, _)| i)
        .collect()
}

/// Upper-confidence-bound filter over candidate actions; falls back to every
/// candidate when none clears the threshold.
pub fn ucb_filter<T: Scalar>(
    candidates: &[Action],
    model: &GpModel<T>,
    beta: T,
    mu_th: T,
) -> Result<Vec<usize>, GpError> {
    let (means, vars) = model.posterior_mean_var(candidates)?;
    let picked = ucb_select(&means, &vars, beta, mu_th);
    Ok(if picked.is_empty() { (0..candidates.len()).collect() } else { picked })
}
