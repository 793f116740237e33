//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use ipp3d::gp::GpHyper;
use ipp3d::nnpolicy::{PolicyObs, PolicyParams, Tensor};
use ipp3d::world::{Action, CellSet, SensorModel, VoxelGrid, VoxelIndex, World};

/// Step used by the dense segment samplers.
pub const DENSE_STEP: f64 = 1e-4;

/// Voxels hit by points sampled every `DENSE_STEP` along `p0 → p1`, endpoints included.
pub fn dense_voxels(grid: &VoxelGrid, p0: [f64; 3], p1: [f64; 3]) -> Vec<VoxelIndex> {
    let len = (0..3).map(|a| (p1[a] - p0[a]).powi(2)).sum::<f64>().sqrt();
    let n = (len / DENSE_STEP).ceil().max(1.0) as usize;
    let mut out: Vec<VoxelIndex> = Vec::new();
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let v = grid.voxel_of([0, 1, 2].map(|a| p0[a] + t * (p1[a] - p0[a])));
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

pub fn dense_ray_clear(grid: &VoxelGrid, p0: [f64; 3], p1: [f64; 3], blocking: CellSet) -> bool {
    dense_voxels(grid, p0, p1).iter().all(|&v| !blocking.contains(grid.get(v)))
}

/// As [`dense_ray_clear`] but the voxel holding `p1` never blocks.
pub fn dense_line_of_sight(grid: &VoxelGrid, p0: [f64; 3], p1: [f64; 3], blocking: CellSet) -> bool {
    let end = grid.voxel_of(p1);
    dense_voxels(grid, p0, p1).iter().all(|&v| v == end || !blocking.contains(grid.get(v)))
}

/// Frustum membership written with angles instead of slopes.
pub fn frustum_oracle(sensor: &SensorModel, pose: &Action, p: [f64; 3]) -> bool {
    let d = [p[0] - pose.pos[0], p[1] - pose.pos[1], p[2] - pose.pos[2]];
    if (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() > sensor.range {
        return false;
    }
    let yaw = pose.yaw.radians();
    let forward = d[0] * yaw.cos() + d[1] * yaw.sin();
    let side = d[1] * yaw.cos() - d[0] * yaw.sin();
    if forward <= 0.0 {
        return false;
    }
    let h = side.abs().atan2(forward).to_degrees();
    let v = d[2].abs().atan2(forward).to_degrees();
    h <= sensor.fov_h_deg / 2.0 + 1e-9 && v <= sensor.fov_v_deg / 2.0 + 1e-9
}

pub fn visible_oracle(world: &World, sensor: &SensorModel, pose: &Action) -> Vec<usize> {
    (0..world.n_targets())
        .filter(|&i| {
            let t = world.targets[i];
            frustum_oracle(sensor, pose, t) && exact_line_of_sight(world.grid(), pose.pos, t, CellSet::TREE)
        })
        .collect()
}

pub fn kernel_oracle(a: &Action, b: &Action, h: &GpHyper<f64>) -> f64 {
    let mut dyaw = (a.yaw.radians() - b.yaw.radians()).abs();
    if dyaw > std::f64::consts::PI {
        dyaw = 2.0 * std::f64::consts::PI - dyaw;
    }
    let e = [
        a.pos[0] - b.pos[0],
        a.pos[1] - b.pos[1],
        a.pos[2] - b.pos[2],
        h.yaw_weight * dyaw / std::f64::consts::PI,
    ];
    h.signal_variance * (-e.iter().map(|x| x * x).sum::<f64>().sqrt() / h.length_scale).exp()
}

/// Posterior mean and covariance through an explicit matrix inverse.
pub fn gp_dense(
    xs: &[Action],
    ys: &[f64],
    h: &GpHyper<f64>,
    queries: &[Action],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, m) = (xs.len(), queries.len());
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel_oracle(&xs[i], &xs[j], h) + if i == j { h.noise_variance } else { 0.0 }
    });
    let ks = DMatrix::from_fn(n, m, |i, j| kernel_oracle(&xs[i], &queries[j], h));
    let kss = DMatrix::from_fn(m, m, |i, j| kernel_oracle(&queries[i], &queries[j], h));
    let kinv = k.try_inverse().expect("invertible kernel");
    let mean = ks.transpose() * &kinv * DVector::from_column_slice(ys);
    let cov = kss - ks.transpose() * &kinv * &ks;
    (mean.iter().copied().collect(), (0..m).map(|i| (0..m).map(|j| cov[(i, j)]).collect()).collect())
}

/// Length of the part of `p0 → p1` inside voxel `v` (slab clipping).
pub fn chord_in_voxel(grid: &VoxelGrid, p0: [f64; 3], p1: [f64; 3], v: VoxelIndex) -> f64 {
    let s = grid.voxel_size();
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for a in 0..3 {
        let (lo, hi) = (v[a] as f64 * s, (v[a] + 1) as f64 * s);
        let d = p1[a] - p0[a];
        if d.abs() < 1e-300 {
            if p0[a] < lo || p0[a] > hi {
                return 0.0;
            }
        } else {
            let (ta, tb) = ((lo - p0[a]) / d, (hi - p0[a]) / d);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    let len = (0..3).map(|a| (p1[a] - p0[a]).powi(2)).sum::<f64>().sqrt();
    (t1 - t0).max(0.0) * len
}

/// Voxels the segment passes through with positive length, found by clipping the
/// segment against every voxel of its bounding box.
pub fn exact_voxels(grid: &VoxelGrid, p0: [f64; 3], p1: [f64; 3]) -> Vec<VoxelIndex> {
    let (a, b) = (grid.voxel_of(p0), grid.voxel_of(p1));
    let mut out = Vec::new();
    for i in a[0].min(b[0])..=a[0].max(b[0]) {
        for j in a[1].min(b[1])..=a[1].max(b[1]) {
            for k in a[2].min(b[2])..=a[2].max(b[2]) {
                if chord_in_voxel(grid, p0, p1, [i, j, k]) > 0.0 {
                    out.push([i, j, k]);
                }
            }
        }
    }
    if out.is_empty() {
        out.push(a);
    }
    out
}

pub fn exact_ray_clear(grid: &VoxelGrid, p0: [f64; 3], p1: [f64; 3], blocking: CellSet) -> bool {
    exact_voxels(grid, p0, p1).iter().all(|&v| !blocking.contains(grid.get(v)))
}

pub fn exact_line_of_sight(grid: &VoxelGrid, p0: [f64; 3], p1: [f64; 3], blocking: CellSet) -> bool {
    let end = grid.voxel_of(p1);
    exact_voxels(grid, p0, p1).iter().all(|&v| v == end || !blocking.contains(grid.get(v)))
}

/// Outcome of comparing a segment verdict against both reference samplers.
#[derive(Debug, PartialEq)]
pub enum RayCheck {
    Agree,
    /// Only the dense sampler disagrees, and every voxel it skipped is crossed for
    /// less than one sampling step.
    SubResolution,
    Mismatch,
}

pub fn check_segment(grid: &VoxelGrid, p0: [f64; 3], p1: [f64; 3], blocking: CellSet, skip_end: bool, got: bool) -> RayCheck {
    let (exact, dense) = if skip_end {
        (exact_line_of_sight(grid, p0, p1, blocking), dense_line_of_sight(grid, p0, p1, blocking))
    } else {
        (exact_ray_clear(grid, p0, p1, blocking), dense_ray_clear(grid, p0, p1, blocking))
    };
    if got != exact {
        return RayCheck::Mismatch;
    }
    if got == dense {
        return RayCheck::Agree;
    }
    let sampled = dense_voxels(grid, p0, p1);
    let end = grid.voxel_of(p1);
    let skipped_short = exact_voxels(grid, p0, p1)
        .into_iter()
        .filter(|v| !sampled.contains(v) && blocking.contains(grid.get(*v)) && !(skip_end && *v == end))
        .all(|v| chord_in_voxel(grid, p0, p1, v) < DENSE_STEP);
    if skipped_short { RayCheck::SubResolution } else { RayCheck::Mismatch }
}

type Mat = Vec<Vec<f64>>;

fn param(p: &PolicyParams<f64>, name: &str) -> Mat {
    let t = p.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let cols = if t.shape().len() == 1 { t.shape()[0] } else { t.shape()[1] };
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn vector(p: &PolicyParams<f64>, name: &str) -> Vec<f64> {
    p.get(name).unwrap().data().to_vec()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn plus(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

fn plus_row(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|x| x.iter().zip(b).map(|(u, v)| u + v).collect()).collect()
}

fn layer_norm(x: &Mat, p: &PolicyParams<f64>, prefix: &str) -> Mat {
    let (g, b) = (vector(p, &format!("{prefix}.gain")), vector(p, &format!("{prefix}.bias")));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-5).sqrt();
            (0..row.len()).map(|c| (row[c] - mean) / sd * g[c] + b[c]).collect()
        })
        .collect()
}

fn attention(q_in: &Mat, kv: &Mat, p: &PolicyParams<f64>, prefix: &str) -> Mat {
    let cfg = p.config();
    let dh = cfg.head_dim() as f64;
    let mut out = vec![vec![0.0; cfg.hidden]; q_in.len()];
    for k in 0..cfg.heads {
        let w = |s: &str| param(p, &format!("{prefix}.h{k}.{s}"));
        let (q, kk, v) = (mm(q_in, &w("wq")), mm(kv, &w("wk")), mm(kv, &w("wv")));
        for i in 0..q.len() {
            let s: Vec<f64> = kk.iter().map(|kr| q[i].iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() / dh.sqrt()).collect();
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
            let mut mix = vec![0.0; v[0].len()];
            for (j, sj) in s.iter().enumerate() {
                for c in 0..mix.len() {
                    mix[c] += (sj - m).exp() / z * v[j][c];
                }
            }
            let o = mm(&vec![mix], &w("wo"));
            for c in 0..cfg.hidden {
                out[i][c] += o[0][c];
            }
        }
    }
    out
}

fn feed_forward(x: &Mat, p: &PolicyParams<f64>, prefix: &str) -> Mat {
    let z = plus_row(&mm(x, &param(p, &format!("{prefix}.w1"))), &vector(p, &format!("{prefix}.b1")));
    let z: Mat = z.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    plus_row(&mm(&z, &param(p, &format!("{prefix}.w2"))), &vector(p, &format!("{prefix}.b2")))
}

/// The actor-critic written out with nested loops: masked log-probabilities and value.
pub fn reference_forward(p: &PolicyParams<f64>, obs: &PolicyObs<f64>) -> (Vec<f64>, f64) {
    let cfg = *p.config();
    let m: Mat = obs.features.iter().map(|f| f.to_vec()).collect();
    let mut x = plus_row(&mm(&m, &param(p, "embed.w")), &vector(p, "embed.b"));
    for l in 0..cfg.encoder_layers {
        let z = layer_norm(&x, p, &format!("enc{l}.ln1"));
        x = plus(&x, &attention(&z, &z, p, &format!("enc{l}.attn")));
        let z = layer_norm(&x, p, &format!("enc{l}.ln2"));
        x = plus(&x, &feed_forward(&z, p, &format!("enc{l}.ff")));
    }
    let enc = layer_norm(&x, p, "enc.ln");

    let cur = vec![m[obs.current_index].clone()];
    let scalars = vec![vec![obs.budget, obs.mu_th]];
    let q = plus(&mm(&cur, &param(p, "state.w_cur")), &mm(&scalars, &param(p, "state.w_scalars")));
    let mut d = plus_row(&q, &vector(p, "state.b"));
    let z = layer_norm(&d, p, "dec.ln1");
    d = plus(&d, &attention(&z, &enc, p, "dec.attn"));
    let z = layer_norm(&d, p, "dec.ln2");
    d = plus(&d, &feed_forward(&z, p, "dec.ff"));
    let query = layer_norm(&d, p, "dec.ln");

    let pq = mm(&query, &param(p, "ptr.wq"));
    let pk = mm(&enc, &param(p, "ptr.wk"));
    let logits: Vec<f64> = pk
        .iter()
        .map(|k| 10.0 * (pq[0].iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (cfg.hidden as f64).sqrt()).tanh())
        .collect();
    let m = (0..logits.len()).filter(|&i| obs.mask[i]).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + (0..logits.len()).filter(|&i| obs.mask[i]).map(|i| (logits[i] - m).exp()).sum::<f64>().ln();
    let log_probs = (0..logits.len()).map(|i| if obs.mask[i] { logits[i] - lse } else { f64::NEG_INFINITY }).collect();
    let value = mm(&query, &param(p, "value.w"))[0][0] + vector(p, "value.b")[0];
    (log_probs, value)
}

/// Central-difference check of every parameter tensor against the tape gradient of
/// `J = Σ cᵢ log pᵢ + c_v V`. Returns the worst elementwise relative error per tensor.
pub fn finite_difference_errors(p: &PolicyParams<f64>, obs: &PolicyObs<f64>, eps: f64) -> Vec<(String, f64)> {
    let l = obs.n_nodes();
    let coef: Vec<f64> = (0..l).map(|i| if obs.mask[i] { 0.3 + 0.4 * i as f64 } else { 0.0 }).collect();
    let cv = 0.7;
    let objective = |q: &PolicyParams<f64>| {
        let out = q.forward(obs).unwrap();
        (0..l).filter(|&i| obs.mask[i]).map(|i| coef[i] * out.log_probs[i]).sum::<f64>() + cv * out.value
    };
    let traced = p.trace(obs).unwrap();
    let mut grads = p.zeros_like();
    traced.tape.backward(
        &[(traced.log_probs, Tensor::matrix(1, l, coef.clone())), (traced.value, Tensor::matrix(1, 1, vec![cv]))],
        &mut grads,
    );
    let mut q = p.clone();
    let mut out = Vec::new();
    for (t, name) in p.names().iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..p.tensors()[t].len() {
            let x = p.tensors()[t].data()[i];
            q.tensors_mut()[t].data_mut()[i] = x + eps;
            let up = objective(&q);
            q.tensors_mut()[t].data_mut()[i] = x - eps;
            let down = objective(&q);
            q.tensors_mut()[t].data_mut()[i] = x;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads[t].data()[i];
            // gradients far below the difference noise floor are compared absolutely
            let scale = numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max((numeric - analytic).abs() / scale);
        }
        out.push((name.clone(), worst));
    }
    out
}
