//! Reverse-mode differentiation over a linear tape of 2-D tensor operations.
//!
//! Parameter leaves borrow the parameter tensors instead of copying them; the
//! backward pass accumulates their gradients into a caller-owned slice indexed
//! like the parameters.

use super::tensor::Tensor;
use crate::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Param(usize),
    Input,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor<T>, inv_std: Vec<T> },
    SoftmaxRows(Var),
    Row(Var, usize),
    MaskedLogSoftmax { a: Var, mask: Vec<bool>, probs: Vec<T> },
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
}

pub struct Tape<'p, T> {
    params: &'p [Tensor<T>],
    nodes: Vec<Node<T>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p [Tensor<T>]) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, op: Op<T>, value: Option<Tensor<T>>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(i), _) => &self.params[*i],
            (_, Some(t)) => t,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len());
        self.push(Op::Param(index), None)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, Some(t))
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let out = self.value(a).matmul(self.value(b), ta, tb);
        self.push(Op::MatMul { a, b, ta, tb }, Some(out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.len(), self.value(b).len(), "add: shape mismatch");
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), Some(out))
    }

    /// Adds the single row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        let cols = bv.len();
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), cols, "add_row: width mismatch");
        for chunk in out.data_mut().chunks_mut(cols) {
            for (x, &y) in chunk.iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        self.push(Op::AddRow(a, b), Some(out))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x *= s);
        self.push(Op::Scale(a, s), Some(out))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = x.max(T::zero()));
        self.push(Op::Relu(a), Some(out))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = x.tanh());
        self.push(Op::Tanh(a), Some(out))
    }

    /// Row-wise layer normalisation with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let n = T::of(cols as f64);
        let mut xhat = Tensor::zeros(&[rows, cols]);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::of(LN_EPS)).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                xhat.data_mut()[r * cols + c] = (row[c] - mean) * is;
            }
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = xhat.clone();
        for chunk in out.data_mut().chunks_mut(cols) {
            for c in 0..cols {
                chunk[c] = chunk[c] * g.data()[c] + b.data()[c];
            }
        }
        self.push(Op::LayerNorm { x, gain, bias, xhat, inv_std }, Some(out))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.push(Op::SoftmaxRows(a), Some(out))
    }

    /// Row `r` of `a` as a `1×cols` tensor.
    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let av = self.value(a);
        let out = Tensor::matrix(1, av.cols(), av.row(r).to_vec());
        self.push(Op::Row(a, r), Some(out))
    }

    /// Log-softmax of a single row restricted to `mask`; masked entries are `−∞`.
    ///
    /// At least one entry must be unmasked.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), mask.len());
        assert!(mask.iter().any(|&m| m), "every entry is masked");
        let m = av
            .data()
            .iter()
            .zip(mask)
            .filter(|(_, &k)| k)
            .map(|(&x, _)| x)
            .fold(T::neg_infinity(), T::max);
        let lse = m + av
            .data()
            .iter()
            .zip(mask)
            .filter(|(_, &k)| k)
            .map(|(&x, _)| (x - m).exp())
            .sum::<T>()
            .ln();
        let out: Vec<T> = av
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &k)| if k { x - lse } else { T::neg_infinity() })
            .collect();
        let probs = out.iter().map(|&l| if l.is_finite() { l.exp() } else { T::zero() }).collect();
        let out = Tensor::matrix(1, mask.len(), out);
        self.push(Op::MaskedLogSoftmax { a, mask: mask.to_vec(), probs }, Some(out))
    }

    /// Propagates the seed gradients back through the tape and adds the
    /// parameter gradients into `param_grads`.
    pub fn backward(&self, seeds: &[(Var, Tensor<T>)], param_grads: &mut [Tensor<T>]) {
        assert_eq!(param_grads.len(), self.params.len());
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads[v.0], g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(p) => param_grads[*p].add_assign(&g),
                Op::Input => {}
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = if *ta { bv.matmul(&g, *tb, true) } else { g.matmul(bv, false, !*tb) };
                    let db = if *tb { g.matmul(av, true, *ta) } else { av.matmul(&g, !*ta, false) };
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::AddRow(a, b) => {
                    let cols = g.cols();
                    let mut db = vec![T::zero(); cols];
                    for row in g.data().chunks(cols) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    accumulate(&mut grads[b.0], Tensor::from_vec(&shape, db));
                    accumulate(&mut grads[a.0], g);
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.data_mut().iter_mut().for_each(|x| *x *= *s);
                    accumulate(&mut grads[a.0], d);
                }
                Op::Relu(a) => {
                    let out = node.value.as_ref().unwrap();
                    let mut d = g;
                    for (x, &y) in d.data_mut().iter_mut().zip(out.data()) {
                        if y <= T::zero() {
                            *x = T::zero();
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::Tanh(a) => {
                    let out = node.value.as_ref().unwrap();
                    let mut d = g;
                    for (x, &y) in d.data_mut().iter_mut().zip(out.data()) {
                        *x *= T::one() - y * y;
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = (xhat.rows(), xhat.cols());
                    let n = T::of(cols as f64);
                    let mut dgain = vec![T::zero(); cols];
                    let mut dbias = vec![T::zero(); cols];
                    let mut dx = Tensor::zeros(&[rows, cols]);
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let gy = g.row(r);
                        let xh = xhat.row(r);
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for c in 0..cols {
                            dgain[c] += gy[c] * xh[c];
                            dbias[c] += gy[c];
                            dxhat[c] = gy[c] * gv.data()[c];
                            sum_d += dxhat[c];
                            sum_dx += dxhat[c] * xh[c];
                        }
                        let k = inv_std[r] / n;
                        for c in 0..cols {
                            dx.data_mut()[r * cols + c] = k * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
                        }
                    }
                    let gshape = gv.shape().to_vec();
                    accumulate(&mut grads[gain.0], Tensor::from_vec(&gshape, dgain));
                    accumulate(&mut grads[bias.0], Tensor::from_vec(&gshape, dbias));
                    accumulate(&mut grads[x.0], dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let cols = y.cols();
                    let mut d = g;
                    for (drow, yrow) in d.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                        let dot: T = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for (x, &p) in drow.iter_mut().zip(yrow) {
                            *x = p * (*x - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::Row(a, r) => {
                    let av = self.value(*a);
                    let mut d = Tensor::zeros(av.shape());
                    let cols = av.cols();
                    d.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.data());
                    accumulate(&mut grads[a.0], d);
                }
                Op::MaskedLogSoftmax { a, mask, probs } => {
                    let total: T = g.data().iter().zip(mask).filter(|(_, &k)| k).map(|(&x, _)| x).sum();
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .zip(mask.iter().zip(probs))
                        .map(|(&x, (&k, &p))| if k { x - p * total } else { T::zero() })
                        .collect();
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads[a.0], Tensor::from_vec(&shape, d));
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, data.to_vec())
    }

    /// Gradient of `Σ w ⊙ f(params)` by central differences, for every parameter entry.
    fn check<F>(params: &mut [Tensor<f64>], build: F)
    where
        F: Fn(&mut Tape<f64>) -> Var,
    {
        let weights = |n: usize| -> Vec<f64> { (0..n).map(|i| 0.3 + 0.17 * i as f64).collect() };
        let loss = |params: &[Tensor<f64>]| {
            let mut tape = Tape::new(params);
            let out = build(&mut tape);
            let v = tape.value(out);
            v.data().iter().zip(weights(v.len())).filter(|(x, _)| x.is_finite()).map(|(x, w)| x * w).sum::<f64>()
        };
        let mut analytic: Vec<Tensor<f64>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        {
            let mut tape = Tape::new(params);
            let out = build(&mut tape);
            let n = tape.value(out).len();
            let seed = Tensor::from_vec(tape.value(out).shape(), weights(n));
            tape.backward(&[(out, seed)], &mut analytic);
        }
        let eps = 1e-6;
        for p in 0..params.len() {
            for j in 0..params[p].len() {
                let x = params[p].data()[j];
                params[p].data_mut()[j] = x + eps;
                let up = loss(params);
                params[p].data_mut()[j] = x - eps;
                let dn = loss(params);
                params[p].data_mut()[j] = x;
                let fd = (up - dn) / (2.0 * eps);
                let an = analytic[p].data()[j];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {p}[{j}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn matmul_variants_grad() {
        let mut ps = vec![
            t(2, 3, &[0.1, -0.4, 0.3, 0.9, 0.2, -0.5]),
            t(3, 2, &[0.7, -0.2, 0.05, 0.6, -0.3, 0.8]),
            t(2, 3, &[0.2, 0.1, -0.7, 0.4, 0.3, 0.5]),
        ];
        check(&mut ps, |tp| {
            let (a, b, c) = (tp.param(0), tp.param(1), tp.param(2));
            let ab = tp.matmul(a, b);
            let act = tp.matmul_nt(a, c);
            let tb = tp.matmul_t(b, true, c, true);
            let s = tp.add(ab, act);
            let s = tp.tanh(s);
            let u = tp.matmul(s, tb);
            tp.relu(u)
        });
    }

    #[test]
    fn norm_softmax_row_grad() {
        let mut ps = vec![
            t(3, 4, &[0.1, -0.4, 0.3, 0.9, 0.2, -0.5, 0.8, 0.0, -0.2, 0.6, 0.45, -0.9]),
            Tensor::from_vec(&[4], vec![1.1, 0.9, 1.3, 0.7]),
            Tensor::from_vec(&[4], vec![0.1, -0.2, 0.0, 0.3]),
        ];
        check(&mut ps, |tp| {
            let (x, g, b) = (tp.param(0), tp.param(1), tp.param(2));
            let y = tp.layer_norm(x, g, b);
            let y = tp.add_row(y, b);
            let y = tp.scale(y, 1.7);
            let s = tp.softmax_rows(y);
            let r = tp.row(s, 1);
            let r2 = tp.row(y, 2);
            tp.add(r, r2)
        });
    }

    #[test]
    fn masked_log_softmax_grad_and_values() {
        let mut ps = vec![t(1, 4, &[0.3, -1.0, 2.0, 0.5])];
        let mask = [true, false, true, true];
        check(&mut ps, |tp| {
            let a = tp.param(0);
            tp.masked_log_softmax(a, &mask)
        });
        let mut tape = Tape::new(&ps);
        let a = tape.param(0);
        let l = tape.masked_log_softmax(a, &mask);
        let v = tape.value(l);
        assert_eq!(v.data()[1], f64::NEG_INFINITY);
        let s: f64 = v.data().iter().filter(|x| x.is_finite()).map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unused_parameter_has_zero_grad() {
        let ps = vec![t(1, 2, &[1.0, 2.0]), t(1, 2, &[3.0, 4.0])];
        let mut grads = vec![Tensor::zeros(&[1, 2]), Tensor::zeros(&[1, 2])];
        let mut tape = Tape::new(&ps);
        let a = tape.param(0);
        let _unused = tape.param(1);
        let y = tape.scale(a, 2.0);
        tape.backward(&[(y, t(1, 2, &[1.0, 1.0]))], &mut grads);
        assert_eq!(grads[0].data(), &[2.0, 2.0]);
        assert_eq!(grads[1].data(), &[0.0, 0.0]);
    }
}
