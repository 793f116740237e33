//! Attention actor-critic over the dynamic graph.
//!
//! Node rows of `M_t` are embedded and passed through pre-norm self-attention
//! blocks. A query built from the current pose row, the remaining budget and the
//! UCB threshold cross-attends to the encoded nodes; a pointer layer scores every
//! node against the decoded query and a linear head reads off the value.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::PolicyError;
use crate::dyngraph::{DynGraph, N_FEATURES};
use crate::Scalar;

/// Pointer logits are squashed to `±POINTER_CLIP` before the softmax.
pub const POINTER_CLIP: f64 = 10.0;
/// Planning-state scalars fed to the query: remaining budget and `μ_th`.
pub const N_STATE_SCALARS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub ff_width: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden: 32, heads: 4, encoder_layers: 2, ff_width: 128 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden == 0 || self.heads == 0 || self.ff_width == 0 {
            return Err("network sizes must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return Err(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform(usize),
    Ones,
    Zeros,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn layout(cfg: &NetConfig) -> Vec<Spec> {
    let (h, dh, f) = (cfg.hidden, cfg.head_dim(), cfg.ff_width);
    let mut out = Vec::new();
    let mut add = |name: String, shape: &[usize], init: Init| {
        out.push(Spec { name, shape: shape.to_vec(), init });
    };
    let norm = |add: &mut dyn FnMut(String, &[usize], Init), p: &str| {
        add(format!("{p}.gain"), &[h], Init::Ones);
        add(format!("{p}.bias"), &[h], Init::Zeros);
    };
    let attention = |add: &mut dyn FnMut(String, &[usize], Init), p: &str| {
        for k in 0..cfg.heads {
            add(format!("{p}.h{k}.wq"), &[h, dh], Init::Uniform(h));
            add(format!("{p}.h{k}.wk"), &[h, dh], Init::Uniform(h));
            add(format!("{p}.h{k}.wv"), &[h, dh], Init::Uniform(h));
            add(format!("{p}.h{k}.wo"), &[dh, h], Init::Uniform(dh));
        }
    };
    let ff = |add: &mut dyn FnMut(String, &[usize], Init), p: &str| {
        add(format!("{p}.w1"), &[h, f], Init::Uniform(h));
        add(format!("{p}.b1"), &[f], Init::Uniform(h));
        add(format!("{p}.w2"), &[f, h], Init::Uniform(f));
        add(format!("{p}.b2"), &[h], Init::Uniform(f));
    };

    add("embed.w".into(), &[N_FEATURES, h], Init::Uniform(N_FEATURES));
    add("embed.b".into(), &[h], Init::Uniform(N_FEATURES));
    for l in 0..cfg.encoder_layers {
        norm(&mut add, &format!("enc{l}.ln1"));
        attention(&mut add, &format!("enc{l}.attn"));
        norm(&mut add, &format!("enc{l}.ln2"));
        ff(&mut add, &format!("enc{l}.ff"));
    }
    norm(&mut add, "enc.ln");
    add("state.w_cur".into(), &[N_FEATURES, h], Init::Uniform(N_FEATURES));
    add("state.w_scalars".into(), &[N_STATE_SCALARS, h], Init::Uniform(N_STATE_SCALARS));
    add("state.b".into(), &[h], Init::Uniform(N_FEATURES + N_STATE_SCALARS));
    norm(&mut add, "dec.ln1");
    attention(&mut add, "dec.attn");
    norm(&mut add, "dec.ln2");
    ff(&mut add, "dec.ff");
    norm(&mut add, "dec.ln");
    add("ptr.wq".into(), &[h, h], Init::Uniform(h));
    add("ptr.wk".into(), &[h, h], Init::Uniform(h));
    add("value.w".into(), &[h, 1], Init::Uniform(h));
    add("value.b".into(), &[1], Init::Uniform(h));
    out
}

/// Named parameter tensors of the actor-critic.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T> {
    cfg: NetConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

/// Everything the policy conditions on at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyObs<T> {
    pub features: Vec<[T; N_FEATURES]>,
    pub current_index: usize,
    pub budget: T,
    pub mu_th: T,
    /// Budget-feasible nodes.
    pub mask: Vec<bool>,
}

impl<T: Scalar> PolicyObs<T> {
    pub fn from_graph(graph: &DynGraph<T>, budget: f64, mu_th: f64) -> Self {
        Self {
            features: graph.features().to_vec(),
            current_index: graph.current_index(),
            budget: T::of(budget),
            mu_th: T::of(mu_th),
            mask: graph.feasible_mask(budget),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.features.len()
    }
}

/// Result of an evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput<T> {
    pub log_probs: Vec<T>,
    pub probs: Vec<T>,
    pub value: T,
}

/// A recorded forward pass that can be differentiated.
pub struct Traced<'p, T> {
    pub tape: Tape<'p, T>,
    pub log_probs: Var,
    pub value: Var,
}

impl<T: Scalar> PolicyParams<T> {
    /// Draws parameters from the documented initializer: `U(±1/√fan_in)` for
    /// projections and biases, unit gain and zero bias for normalisation.
    pub fn init<R: Rng + ?Sized>(cfg: NetConfig, rng: &mut R) -> Self {
        cfg.validate().expect("invalid network config");
        let specs = layout(&cfg);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let n: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Ones => vec![T::one(); n],
                Init::Zeros => vec![T::zero(); n],
                Init::Uniform(fan_in) => {
                    let b = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| T::of(rng.random_range(-b..b))).collect()
                }
            };
            names.push(s.name);
            tensors.push(Tensor::from_vec(&s.shape, data));
        }
        Self::assemble(cfg, names, tensors)
    }

    fn assemble(cfg: NetConfig, names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { cfg, names, tensors, index }
    }

    /// Rebuilds parameters from named tensors, inferring the network sizes and
    /// checking every name and shape.
    pub fn from_named(named: Vec<(String, Tensor<T>)>) -> Result<Self, PolicyError> {
        let lookup: HashMap<&str, &Tensor<T>> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let bad = |m: String| PolicyError::Format(m);
        let shape_of = |n: &str| lookup.get(n).map(|t| t.shape().to_vec()).ok_or_else(|| bad(format!("missing tensor {n}")));
        let hidden = shape_of("embed.w")?[1];
        let ff_width = shape_of("dec.ff.w1")?[1];
        let heads = (0..).take_while(|k| lookup.contains_key(format!("dec.attn.h{k}.wq").as_str())).count();
        let encoder_layers = (0..).take_while(|l| lookup.contains_key(format!("enc{l}.ln1.gain").as_str())).count();
        let cfg = NetConfig { hidden, heads, encoder_layers, ff_width };
        cfg.validate().map_err(bad)?;
        let specs = layout(&cfg);
        if specs.len() != named.len() {
            return Err(bad(format!("expected {} tensors, found {}", specs.len(), named.len())));
        }
        for (s, (n, t)) in specs.iter().zip(&named) {
            if &s.name != n || s.shape != t.shape() {
                return Err(bad(format!("tensor {n} {:?} does not match expected {} {:?}", t.shape(), s.name, s.shape)));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self::assemble(cfg, names, tensors))
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zero tensors shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Scalar>(&self) -> PolicyParams<U> {
        PolicyParams::assemble(self.cfg, self.names.clone(), self.tensors.iter().map(Tensor::cast).collect())
    }

    fn p(&self, tape: &mut Tape<'_, T>, name: &str) -> Var {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
        tape.param(i)
    }

    fn norm(&self, tape: &mut Tape<'_, T>, x: Var, prefix: &str) -> Var {
        let g = self.p(tape, &format!("{prefix}.gain"));
        let b = self.p(tape, &format!("{prefix}.bias"));
        tape.layer_norm(x, g, b)
    }

    fn attention(&self, tape: &mut Tape<'_, T>, q_in: Var, kv_in: Var, prefix: &str) -> Var {
        let scale = T::one() / T::of(self.cfg.head_dim() as f64).sqrt();
        let mut acc = None;
        for k in 0..self.cfg.heads {
            let wq = self.p(tape, &format!("{prefix}.h{k}.wq"));
            let wk = self.p(tape, &format!("{prefix}.h{k}.wk"));
            let wv = self.p(tape, &format!("{prefix}.h{k}.wv"));
            let wo = self.p(tape, &format!("{prefix}.h{k}.wo"));
            let q = tape.matmul(q_in, wq);
            let kk = tape.matmul(kv_in, wk);
            let v = tape.matmul(kv_in, wv);
            let s = tape.matmul_nt(q, kk);
            let s = tape.scale(s, scale);
            let a = tape.softmax_rows(s);
            let o = tape.matmul(a, v);
            let o = tape.matmul(o, wo);
            acc = Some(match acc {
                None => o,
                Some(prev) => tape.add(prev, o),
            });
        }
        acc.expect("at least one head")
    }

    fn feed_forward(&self, tape: &mut Tape<'_, T>, x: Var, prefix: &str) -> Var {
        let w1 = self.p(tape, &format!("{prefix}.w1"));
        let b1 = self.p(tape, &format!("{prefix}.b1"));
        let w2 = self.p(tape, &format!("{prefix}.w2"));
        let b2 = self.p(tape, &format!("{prefix}.b2"));
        let z = tape.matmul(x, w1);
        let z = tape.add_row(z, b1);
        let z = tape.relu(z);
        let z = tape.matmul(z, w2);
        tape.add_row(z, b2)
    }

    /// Runs the network on a tape so that the pass can be differentiated.
    pub fn trace<'p>(&'p self, obs: &PolicyObs<T>) -> Result<Traced<'p, T>, PolicyError> {
        let l = obs.n_nodes();
        assert!(l > 0 && obs.mask.len() == l && obs.current_index < l);
        if !obs.mask.iter().any(|&m| m) {
            return Err(PolicyError::AllMasked);
        }
        let mut tape = Tape::new(&self.tensors);
        let feats: Vec<T> = obs.features.iter().flatten().copied().collect();
        let m = tape.input(Tensor::matrix(l, N_FEATURES, feats));

        let w = self.p(&mut tape, "embed.w");
        let b = self.p(&mut tape, "embed.b");
        let x = tape.matmul(m, w);
        let mut x = tape.add_row(x, b);
        for layer in 0..self.cfg.encoder_layers {
            let z = self.norm(&mut tape, x, &format!("enc{layer}.ln1"));
            let a = self.attention(&mut tape, z, z, &format!("enc{layer}.attn"));
            x = tape.add(x, a);
            let z = self.norm(&mut tape, x, &format!("enc{layer}.ln2"));
            let f = self.feed_forward(&mut tape, z, &format!("enc{layer}.ff"));
            x = tape.add(x, f);
        }
        let enc = self.norm(&mut tape, x, "enc.ln");

        let cur = tape.row(m, obs.current_index);
        let scalars = tape.input(Tensor::matrix(1, N_STATE_SCALARS, vec![obs.budget, obs.mu_th]));
        let wc = self.p(&mut tape, "state.w_cur");
        let ws = self.p(&mut tape, "state.w_scalars");
        let bs = self.p(&mut tape, "state.b");
        let qc = tape.matmul(cur, wc);
        let qs = tape.matmul(scalars, ws);
        let q = tape.add(qc, qs);
        let mut d = tape.add_row(q, bs);
        let z = self.norm(&mut tape, d, "dec.ln1");
        let a = self.attention(&mut tape, z, enc, "dec.attn");
        d = tape.add(d, a);
        let z = self.norm(&mut tape, d, "dec.ln2");
        let f = self.feed_forward(&mut tape, z, "dec.ff");
        d = tape.add(d, f);
        let query = self.norm(&mut tape, d, "dec.ln");

        let wq = self.p(&mut tape, "ptr.wq");
        let wk = self.p(&mut tape, "ptr.wk");
        let pq = tape.matmul(query, wq);
        let pk = tape.matmul(enc, wk);
        let u = tape.matmul_nt(pq, pk);
        let u = tape.scale(u, T::one() / T::of(self.cfg.hidden as f64).sqrt());
        let u = tape.tanh(u);
        let logits = tape.scale(u, T::of(POINTER_CLIP));
        let log_probs = tape.masked_log_softmax(logits, &obs.mask);

        let vw = self.p(&mut tape, "value.w");
        let vb = self.p(&mut tape, "value.b");
        let v = tape.matmul(query, vw);
        let value = tape.add_row(v, vb);
        Ok(Traced { tape, log_probs, value })
    }

    /// Action distribution and value estimate.
    pub fn forward(&self, obs: &PolicyObs<T>) -> Result<PolicyOutput<T>, PolicyError> {
        let t = self.trace(obs)?;
        let log_probs = t.tape.value(t.log_probs).data().to_vec();
        let probs = log_probs.iter().map(|&l| if l.is_finite() { l.exp() } else { T::zero() }).collect();
        let value = t.tape.value(t.value).data()[0];
        Ok(PolicyOutput { log_probs, probs, value })
    }
}
