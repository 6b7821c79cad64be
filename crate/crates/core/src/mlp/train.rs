//! Levenberg–Marquardt training with optional Bayesian-regularized weight decay.
//!
//! Everything runs in normalized units. With regularization ratio `r = alpha/beta`
//! the objective is `F = E_D + r * E_W` where `E_D = SSE/2` and `E_W = |w|^2/2`,
//! and each trial step solves `(J'J + (r + mu) I) d = -(J'e + r w)`.
//! In Bayesian mode `r` is re-estimated after every accepted step from
//! `gamma = N_w - r * tr((J'J + r I)^-1)`, `alpha = gamma / 2E_W`,
//! `beta = (N - gamma) / 2E_D`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MlpError, MlpModel, Normalizer};

/// Samples per Jacobian chunk fed to the `J'J` accumulation.
const CHUNK_SAMPLES: usize = 128;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    Empty,
    #[error("dataset is {data_in}->{data_out} but the model is {model_in}->{model_out}")]
    ShapeMismatch { data_in: usize, data_out: usize, model_in: usize, model_out: usize },
    #[error("invalid training options: {0}")]
    Options(String),
    #[error("normal equations stayed singular up to the maximum damping {0:e}")]
    Singular(f64),
    #[error(transparent)]
    Model(#[from] MlpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Regularization {
    None,
    /// Fixed weight-decay ratio `r` in `E_D + r * E_W`.
    FixedL2 { decay: f64 },
    Bayes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub max_iter: usize,
    pub mu_init: f64,
    pub mu_dec: f64,
    pub mu_inc: f64,
    pub mu_max: f64,
    /// Stop once an accepted step lowers the objective by less than this fraction.
    pub tol: f64,
    pub regularization: Regularization,
    /// Seeds the train/validation block split.
    pub seed: u64,
    pub val_fraction: f64,
    /// Contiguous samples per split block.
    pub block_len: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iter: 500,
            mu_init: 1e-3,
            mu_dec: 0.1,
            mu_inc: 10.0,
            mu_max: 1e10,
            tol: 1e-9,
            regularization: Regularization::Bayes,
            seed: 0,
            val_fraction: 0.2,
            block_len: 256,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Options(m.to_string()));
        if self.max_iter < 1 {
            return bad("max_iter must be >= 1");
        }
        if !(self.mu_init > 0.0) || !(self.mu_max >= self.mu_init) {
            return bad("damping must satisfy 0 < mu_init <= mu_max");
        }
        if !(self.mu_dec > 0.0 && self.mu_dec < 1.0) || !(self.mu_inc > 1.0) {
            return bad("damping factors must satisfy 0 < mu_dec < 1 < mu_inc");
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be >= 0");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        if self.block_len == 0 {
            return bad("block_len must be >= 1");
        }
        if let Regularization::FixedL2 { decay } = self.regularization {
            if !(decay >= 0.0) {
                return bad("decay must be >= 0");
            }
        }
        Ok(())
    }
}

/// Row-major inputs and targets in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub n_in: usize,
    pub n_out: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl TrainingData {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        TrainingData { n_in, n_out, inputs: Vec::new(), targets: Vec::new() }
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), self.n_in);
        assert_eq!(y.len(), self.n_out);
        self.inputs.extend_from_slice(x);
        self.targets.extend_from_slice(y);
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.n_in).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_in..(i + 1) * self.n_in]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.n_out..(i + 1) * self.n_out]
    }

    /// Evenly spaced subset of at most `max_samples` rows, first row kept.
    pub fn decimate(&self, max_samples: usize) -> TrainingData {
        let n = self.len();
        if max_samples == 0 || n <= max_samples {
            return self.clone();
        }
        let mut out = TrainingData::new(self.n_in, self.n_out);
        for k in 0..max_samples {
            let i = k * n / max_samples;
            out.push(self.input(i), self.target(i));
        }
        out
    }

    pub fn rows(&self, idx: &[usize]) -> TrainingData {
        let mut out = TrainingData::new(self.n_in, self.n_out);
        for &i in idx {
            out.push(self.input(i), self.target(i));
        }
        out
    }

    /// Same inputs, single target column `k`.
    pub fn column(&self, k: usize) -> TrainingData {
        let mut out = TrainingData::new(self.n_in, 1);
        for i in 0..self.len() {
            out.push(self.input(i), &[self.target(i)[k]]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIter,
    Tolerance,
    DampingOverflow,
}

/// One accepted (or final overflowed) LM iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub mu: f64,
    /// Normalized-unit MSE on the training split after the step.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub objective_before: f64,
    pub objective_after: f64,
    /// Regularization ratio used for this step.
    pub reg_ratio: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
    pub stop: StopReason,
    pub n_train: usize,
    pub n_val: usize,
}

/// Splits `n` samples into contiguous blocks and assigns a seeded random
/// `val_fraction` of them to validation. Both index lists are ascending.
pub fn split_blocks(n: usize, opts: &TrainOptions) -> (Vec<usize>, Vec<usize>) {
    let n_blocks = n.div_ceil(opts.block_len);
    let mut n_val = (n_blocks as f64 * opts.val_fraction).round() as usize;
    if n_val >= n_blocks {
        n_val = n_blocks.saturating_sub(1);
    }
    let mut order: Vec<usize> = (0..n_blocks).collect();
    order.shuffle(&mut crate::seed::rng(crate::seed::derive(opts.seed, "split", 0)));
    let mut is_val = vec![false; n_blocks];
    for &b in &order[..n_val] {
        is_val[b] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for i in 0..n {
        if is_val[i / opts.block_len] {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

struct Normalized {
    x: Vec<f64>,
    t: Vec<f64>,
    n: usize,
}

fn normalize(data: &TrainingData, in_norm: &Normalizer, out_norm: &Normalizer) -> Normalized {
    let mut x = vec![0.0; data.inputs.len()];
    let mut t = vec![0.0; data.targets.len()];
    for i in 0..data.len() {
        in_norm.apply(data.input(i), &mut x[i * data.n_in..(i + 1) * data.n_in]);
        out_norm.apply(data.target(i), &mut t[i * data.n_out..(i + 1) * data.n_out]);
    }
    Normalized { x, t, n: data.len() }
}

fn sse(model: &MlpModel, set: &Normalized) -> f64 {
    let mut hidden = vec![0.0; model.n_hidden];
    let mut out = vec![0.0; model.n_out];
    let mut acc = 0.0;
    for i in 0..set.n {
        model.forward_normalized(&set.x[i * model.n_in..(i + 1) * model.n_in], &mut hidden, &mut out);
        for (k, o) in out.iter().enumerate() {
            let e = o - set.t[i * model.n_out + k];
            acc += e * e;
        }
    }
    acc
}

/// Hidden activations and output errors for every sample of a set.
#[derive(Default)]
struct Forward {
    hidden: Vec<f64>,
    err: Vec<f64>,
}

/// Fills `fwd` and returns the sum of squared errors.
fn forward_all(model: &MlpModel, set: &Normalized, fwd: &mut Forward) -> f64 {
    let (nh, n_out) = (model.n_hidden, model.n_out);
    fwd.hidden.resize(set.n * nh, 0.0);
    fwd.err.resize(set.n * n_out, 0.0);
    let mut out = vec![0.0; n_out];
    let mut acc = 0.0;
    for i in 0..set.n {
        let x = &set.x[i * model.n_in..(i + 1) * model.n_in];
        model.forward_normalized(x, &mut fwd.hidden[i * nh..(i + 1) * nh], &mut out);
        for (k, o) in out.iter().enumerate() {
            let e = o - set.t[i * n_out + k];
            fwd.err[i * n_out + k] = e;
            acc += e * e;
        }
    }
    acc
}

/// `c += a^T b` where `a` holds `k` rows of `m` values starting at
/// `a_off` with row stride `a_rs`, and `b` holds `k` rows of `n` values with
/// row stride `b_rs`. `c` is row-major `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm_tn(c: &mut [f64], a: &[f64], a_off: usize, a_rs: usize, m: usize, b: &[f64], b_rs: usize, n: usize, k: usize) {
    if k == 0 {
        return;
    }
    assert!(a_off + (k - 1) * a_rs + m <= a.len());
    assert!((k - 1) * b_rs + n <= b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(a_off),
            1,
            a_rs as isize,
            b.as_ptr(),
            b_rs as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Packed index of the unordered pair `(a, b)` among `n` items.
fn tri(a: usize, b: usize, n: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * n - a * (a + 1) / 2 + b
}

/// Gauss–Newton matrix `J'J` (row-major) and gradient `J'e` of `E_D`.
///
/// For output `k` the hidden-parameter part of a `J` row is
/// `(W2[k,:] o g) (x) x~` with `g = 1 - h^2` and `x~ = (x, 1)`; the
/// output-parameter part is `h~ = (h, 1)` in block `k`. Since `W2` does not
/// vary over samples, only output-independent sums are accumulated:
/// `sum_s g g' (x) x~x~'` (packed upper triangles), `sum_s g (x~ (x) h~)'`
/// and `sum_s h~h~'`, then scaled by `W2` entries on assembly.
fn normal_equations(model: &MlpModel, set: &Normalized, fwd: &Forward) -> (Vec<f64>, Vec<f64>) {
    let (n_in, nh, n_out) = (model.n_in, model.n_hidden, model.n_out);
    let p = model.n_params();
    let nx = n_in + 1;
    let p1 = nh * nx;
    let q = nh + 1;
    let nd = nh * (nh + 1) / 2;
    let nxp = nx * (nx + 1) / 2;
    let in_col = |j: usize, c: usize| if c < n_in { j * n_in + c } else { nh * n_in + j };
    let out_col = |k: usize, j: usize| if j < nh { p1 + k * nh + j } else { p1 + n_out * nh + k };
    let w2 = &model.w2;

    let mut acc_gg = vec![0.0; nd * nxp];
    let mut acc_cross = vec![0.0; nh * nx * q];
    let mut acc_hh = vec![0.0; q * q];
    let mut acc_g1 = vec![0.0; nh * nx];
    let mut acc_g2 = vec![0.0; n_out * q];
    let mut gpack = vec![0.0; CHUNK_SAMPLES * nd];
    let mut xpack = vec![0.0; CHUNK_SAMPLES * nxp];
    let mut gbuf = vec![0.0; CHUNK_SAMPLES * nh];
    let mut xh = vec![0.0; CHUNK_SAMPLES * nx * q];
    let mut ht = vec![0.0; CHUNK_SAMPLES * q];
    let mut xt = vec![0.0; CHUNK_SAMPLES * nx];
    let mut de = vec![0.0; CHUNK_SAMPLES * nh];
    let mut ebuf = vec![0.0; CHUNK_SAMPLES * n_out];
    let mut start = 0;
    while start < set.n {
        let end = (start + CHUNK_SAMPLES).min(set.n);
        let ns = end - start;
        for (s, i) in (start..end).enumerate() {
            let xn = &set.x[i * n_in..(i + 1) * n_in];
            let hidden = &fwd.hidden[i * nh..(i + 1) * nh];
            let xs = &mut xt[s * nx..(s + 1) * nx];
            xs[..n_in].copy_from_slice(xn);
            xs[n_in] = 1.0;
            let hs = &mut ht[s * q..(s + 1) * q];
            hs[..nh].copy_from_slice(hidden);
            hs[nh] = 1.0;
            let es = &mut ebuf[s * n_out..(s + 1) * n_out];
            es.copy_from_slice(&fwd.err[i * n_out..(i + 1) * n_out]);
            let gs = &mut gbuf[s * nh..(s + 1) * nh];
            let des = &mut de[s * nh..(s + 1) * nh];
            for j in 0..nh {
                gs[j] = 1.0 - hidden[j] * hidden[j];
                des[j] = gs[j] * (0..n_out).map(|k| w2[k * nh + j] * es[k]).sum::<f64>();
            }
            let gp = &mut gpack[s * nd..(s + 1) * nd];
            let mut idx = 0;
            for a in 0..nh {
                let ga = gs[a];
                for &gb in &gs[a..] {
                    gp[idx] = ga * gb;
                    idx += 1;
                }
            }
            let xp = &mut xpack[s * nxp..(s + 1) * nxp];
            let xhs = &mut xh[s * nx * q..(s + 1) * nx * q];
            let mut idx = 0;
            for a in 0..nx {
                let xa = xs[a];
                for &xb in &xs[a..] {
                    xp[idx] = xa * xb;
                    idx += 1;
                }
                for (v, &h) in xhs[a * q..(a + 1) * q].iter_mut().zip(hs.iter()) {
                    *v = xa * h;
                }
            }
        }
        gemm_tn(&mut acc_gg, &gpack, 0, nd, nd, &xpack, nxp, nxp, ns);
        gemm_tn(&mut acc_cross, &gbuf, 0, nh, nh, &xh, nx * q, nx * q, ns);
        gemm_tn(&mut acc_hh, &ht, 0, q, q, &ht, q, q, ns);
        gemm_tn(&mut acc_g1, &de, 0, nh, nh, &xt, nx, nx, ns);
        gemm_tn(&mut acc_g2, &ebuf, 0, n_out, n_out, &ht, q, q, ns);
        start = end;
    }

    let mut jtj = vec![0.0; p * p];
    let mut g = vec![0.0; p];
    for j in 0..nh {
        for j2 in 0..nh {
            let wtw: f64 = (0..n_out).map(|k| w2[k * nh + j] * w2[k * nh + j2]).sum();
            let row = &acc_gg[tri(j, j2, nh) * nxp..(tri(j, j2, nh) + 1) * nxp];
            for c in 0..nx {
                let r = in_col(j, c);
                for c2 in 0..nx {
                    jtj[r * p + in_col(j2, c2)] = wtw * row[tri(c, c2, nx)];
                }
            }
        }
        for c in 0..nx {
            g[in_col(j, c)] = acc_g1[j * nx + c];
        }
    }
    for k in 0..n_out {
        for j in 0..nh {
            let w = w2[k * nh + j];
            for c in 0..nx {
                let r = in_col(j, c);
                let src = &acc_cross[(j * nx + c) * q..(j * nx + c + 1) * q];
                for (j2, &v) in src.iter().enumerate() {
                    jtj[r * p + out_col(k, j2)] = w * v;
                    jtj[out_col(k, j2) * p + r] = w * v;
                }
            }
        }
        for j2 in 0..q {
            g[out_col(k, j2)] = acc_g2[k * q + j2];
            for j3 in 0..q {
                jtj[out_col(k, j2) * p + out_col(k, j3)] = acc_hh[j2 * q + j3];
            }
        }
    }
    (jtj, g)
}

fn damped(jtj: &[f64], p: usize, shift: f64) -> DMatrix<f64> {
    // symmetric, so row-major and column-major agree
    let mut a = DMatrix::from_column_slice(p, p, jtj);
    for i in 0..p {
        a[(i, i)] += shift;
    }
    a
}

fn effective_params(jtj: &[f64], p: usize, r: f64) -> f64 {
    if r <= 0.0 {
        return p as f64;
    }
    match Cholesky::new(damped(jtj, p, r)) {
        // tr(A^-1) = |L^-1|_F^2 for A = L L'
        Some(ch) => match ch.l().solve_lower_triangular(&DMatrix::identity(p, p)) {
            Some(l_inv) => (p as f64 - r * l_inv.norm_squared()).clamp(0.0, p as f64),
            None => p as f64,
        },
        None => p as f64,
    }
}

/// Trains a copy of `model` on `data`. Normalization is refitted on the
/// training split; the input model supplies the initial weights.
pub fn train(model: &MlpModel, data: &TrainingData, opts: &TrainOptions) -> Result<(MlpModel, TrainHistory), TrainError> {
    opts.validate()?;
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    if data.n_in != model.n_in || data.n_out != model.n_out {
        return Err(TrainError::ShapeMismatch {
            data_in: data.n_in,
            data_out: data.n_out,
            model_in: model.n_in,
            model_out: model.n_out,
        });
    }
    let (train_idx, val_idx) = split_blocks(data.len(), opts);
    let train_data = data.rows(&train_idx);
    let val_data = data.rows(&val_idx);

    let mut m = model.clone();
    m.in_norm = Normalizer::fit(&train_data.inputs, data.n_in);
    m.out_norm = Normalizer::fit(&train_data.targets, data.n_out);
    let tr = normalize(&train_data, &m.in_norm, &m.out_norm);
    let va = normalize(&val_data, &m.in_norm, &m.out_norm);
    let n_res = (tr.n * m.n_out) as f64;
    let n_out = m.n_out;
    let mse = move |sse: f64, n: usize| sse / (n * n_out) as f64;

    let p = m.n_params();
    let mut w = m.params();
    let mut r = match opts.regularization {
        Regularization::FixedL2 { decay } => decay,
        Regularization::None | Regularization::Bayes => 0.0,
    };
    let mut gamma = p as f64;
    let mut mu = opts.mu_init;
    let mut fwd = Forward::default();
    let mut trial_fwd = Forward::default();
    let mut e_d = 0.5 * forward_all(&m, &tr, &mut fwd);
    let mut records = Vec::new();
    let mut stop = StopReason::MaxIter;

    'outer: for iter in 0..opts.max_iter {
        let (jtj, g) = normal_equations(&m, &tr, &fwd);
        let e_w = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        let before = e_d + r * e_w;
        let rhs = DVector::from_iterator(p, g.iter().zip(&w).map(|(gi, wi)| -(gi + r * wi)));
        let mut last_singular;
        let (trial, trial_e_d, after) = loop {
            last_singular = true;
            if let Some(ch) = Cholesky::new(damped(&jtj, p, r + mu)) {
                last_singular = false;
                let delta = ch.solve(&rhs);
                let trial: Vec<f64> = w.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                m.set_params(&trial);
                let t_e_d = 0.5 * forward_all(&m, &tr, &mut trial_fwd);
                let t_e_w = 0.5 * trial.iter().map(|v| v * v).sum::<f64>();
                let after = t_e_d + r * t_e_w;
                if after.is_finite() && after < before {
                    mu *= opts.mu_dec;
                    std::mem::swap(&mut fwd, &mut trial_fwd);
                    break (trial, t_e_d, after);
                }
                m.set_params(&w);
            }
            mu *= opts.mu_inc;
            if mu > opts.mu_max {
                if last_singular && records.is_empty() {
                    return Err(TrainError::Singular(opts.mu_max));
                }
                stop = StopReason::DampingOverflow;
                break 'outer;
            }
        };
        w = trial;
        e_d = trial_e_d;
        let step_ratio = r;
        if opts.regularization == Regularization::Bayes {
            gamma = effective_params(&jtj, p, r);
            let e_w = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
            if e_w > 0.0 && e_d > 0.0 && n_res > gamma {
                let alpha = gamma / (2.0 * e_w);
                let beta = (n_res - gamma) / (2.0 * e_d);
                r = alpha / beta;
            }
        }
        records.push(TrainRecord {
            iter,
            mu,
            train_mse: mse(2.0 * e_d, tr.n),
            val_mse: (va.n > 0).then(|| mse(sse(&m, &va), va.n)),
            objective_before: before,
            objective_after: after,
            reg_ratio: step_ratio,
            gamma,
        });
        if before - after <= opts.tol * before {
            stop = StopReason::Tolerance;
            break;
        }
    }
    m.set_params(&w);
    m.meta.options = Some(opts.clone());
    m.meta.final_train_mse = Some(mse(2.0 * e_d, tr.n));
    m.meta.stop_reason = Some(stop);
    m.meta.iterations = records.len();
    Ok((m, TrainHistory { records, stop, n_train: tr.n, n_val: va.n }))
}

/// Trains one single-output network per target column from the same
/// initial seed and merges them into a block-diagonal
/// `n_in -> n_out * n_hidden -> n_out` network.
pub fn train_per_axis(
    n_hidden: usize,
    data: &TrainingData,
    opts: &TrainOptions,
    init_seed: u64,
) -> Result<(MlpModel, Vec<TrainHistory>), TrainError> {
    let mut parts = Vec::with_capacity(data.n_out);
    let mut histories = Vec::with_capacity(data.n_out);
    for k in 0..data.n_out {
        let init = MlpModel::init(data.n_in, n_hidden, 1, crate::seed::derive(init_seed, "axis", k as u64))?;
        let (m, h) = train(&init, &data.column(k), opts)?;
        parts.push(m);
        histories.push(h);
    }
    let n_out = data.n_out;
    let nh = n_hidden * n_out;
    let mut merged = MlpModel::init(data.n_in, nh, n_out, init_seed)?;
    merged.w2 = vec![0.0; n_out * nh];
    merged.w1.clear();
    merged.b1.clear();
    merged.in_norm = parts[0].in_norm.clone();
    merged.out_norm = Normalizer { min: Vec::new(), max: Vec::new() };
    for (k, part) in parts.iter().enumerate() {
        merged.w1.extend_from_slice(&part.w1);
        merged.b1.extend_from_slice(&part.b1);
        merged.w2[k * nh + k * n_hidden..k * nh + (k + 1) * n_hidden].copy_from_slice(&part.w2);
        merged.b2[k] = part.b2[0];
        merged.out_norm.min.push(part.out_norm.min[0]);
        merged.out_norm.max.push(part.out_norm.max[0]);
    }
    merged.meta.options = Some(opts.clone());
    merged.meta.final_train_mse =
        Some(parts.iter().filter_map(|m| m.meta.final_train_mse).sum::<f64>() / n_out as f64);
    merged.meta.iterations = parts.iter().map(|m| m.meta.iterations).sum();
    Ok((merged, histories))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn linear_data(n: usize) -> TrainingData {
        let mut d = TrainingData::new(1, 1);
        for i in 0..n {
            let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            d.push(&[x], &[2.0 * x]);
        }
        d
    }

    fn noisy_sine(n: usize, seed: u64) -> TrainingData {
        let mut rng = crate::seed::rng(seed);
        let mut d = TrainingData::new(1, 1);
        for i in 0..n {
            let x = -3.0 + 6.0 * i as f64 / (n - 1) as f64;
            let noise: f64 = rng.sample(StandardNormal);
            d.push(&[x], &[x.sin() + 0.3 * noise]);
        }
        d
    }

    #[test]
    fn fits_linear_target() {
        let opts = TrainOptions { max_iter: 200, regularization: Regularization::None, ..TrainOptions::default() };
        let init = MlpModel::init(1, 3, 1, 0).unwrap();
        let (m, h) = train(&init, &linear_data(400), &opts).unwrap();
        let rmse = m.meta.final_train_mse.unwrap().sqrt();
        assert!(rmse < 1e-3, "rmse {rmse} after {} iters", h.records.len());
        assert!((m.forward(&[0.5]).unwrap()[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn accepted_steps_never_increase_objective() {
        for reg in [Regularization::None, Regularization::FixedL2 { decay: 1e-3 }, Regularization::Bayes] {
            let opts = TrainOptions { max_iter: 60, regularization: reg, ..TrainOptions::default() };
            let (_, h) = train(&MlpModel::init(1, 6, 1, 2).unwrap(), &noisy_sine(600, 1), &opts).unwrap();
            assert!(!h.records.is_empty());
            for r in &h.records {
                assert!(r.objective_after <= r.objective_before, "{reg:?} {r:?}");
            }
            if reg == Regularization::None {
                for w in h.records.windows(2) {
                    assert!(w[1].train_mse <= w[0].train_mse);
                }
            }
        }
    }

    #[test]
    fn bayes_shrinks_weights() {
        let data = noisy_sine(500, 3);
        let init = MlpModel::init(1, 20, 1, 4).unwrap();
        let run = |reg| {
            let opts = TrainOptions { max_iter: 80, tol: 0.0, regularization: reg, ..TrainOptions::default() };
            train(&init, &data, &opts).unwrap().0
        };
        let plain = run(Regularization::None);
        let bayes = run(Regularization::Bayes);
        assert!(bayes.weight_norm() < plain.weight_norm(), "bayes {} plain {}", bayes.weight_norm(), plain.weight_norm());
    }

    #[test]
    fn training_is_deterministic() {
        let data = noisy_sine(300, 5);
        let opts = TrainOptions { max_iter: 20, ..TrainOptions::default() };
        let init = MlpModel::init(1, 5, 1, 6).unwrap();
        let a = train(&init, &data, &opts).unwrap();
        let b = train(&init, &data, &opts).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn split_is_blockwise_and_seeded() {
        let opts = TrainOptions { block_len: 10, ..TrainOptions::default() };
        let (train, val) = split_blocks(100, &opts);
        assert_eq!((train.len(), val.len()), (80, 20));
        for chunk in val.chunks(10) {
            assert_eq!(chunk[0] % 10, 0);
            assert_eq!(chunk[9], chunk[0] + 9);
        }
        let other = split_blocks(100, &TrainOptions { seed: 1, ..opts.clone() });
        assert_eq!(split_blocks(100, &opts), (train, val.clone()));
        assert_ne!(other.1, val);
        let tiny = split_blocks(5, &opts);
        assert_eq!((tiny.0.len(), tiny.1.len()), (5, 0));
    }

    #[test]
    fn normalization_fitted_on_training_split_only() {
        let mut d = TrainingData::new(1, 1);
        for i in 0..40 {
            d.push(&[i as f64], &[i as f64]);
        }
        let opts = TrainOptions { max_iter: 1, block_len: 10, val_fraction: 0.25, ..TrainOptions::default() };
        let (train_idx, _) = split_blocks(40, &opts);
        let (m, _) = train(&MlpModel::init(1, 2, 1, 0).unwrap(), &d, &opts).unwrap();
        assert_eq!(m.in_norm.min[0], *train_idx.first().unwrap() as f64);
        assert_eq!(m.in_norm.max[0], *train_idx.last().unwrap() as f64);
    }

    #[test]
    fn rejects_bad_inputs() {
        let init = MlpModel::init(2, 3, 1, 0).unwrap();
        assert!(matches!(train(&init, &TrainingData::new(2, 1), &TrainOptions::default()), Err(TrainError::Empty)));
        assert!(matches!(
            train(&init, &linear_data(10), &TrainOptions::default()),
            Err(TrainError::ShapeMismatch { .. })
        ));
        let opts = TrainOptions { max_iter: 0, ..TrainOptions::default() };
        assert!(matches!(train(&init, &linear_data(10), &opts), Err(TrainError::Options(_))));
    }

    #[test]
    fn per_axis_merge_matches_parts() {
        let mut d = TrainingData::new(2, 2);
        for i in 0..200 {
            let (a, b) = ((i % 20) as f64 / 10.0 - 1.0, (i / 20) as f64 / 5.0 - 1.0);
            d.push(&[a, b], &[a * b, a + 0.5 * b * b]);
        }
        let opts = TrainOptions { max_iter: 15, ..TrainOptions::default() };
        let (merged, hist) = train_per_axis(4, &d, &opts, 7).unwrap();
        assert_eq!((merged.n_hidden, hist.len()), (8, 2));
        for k in 0..2 {
            let init = MlpModel::init(2, 4, 1, crate::seed::derive(7, "axis", k as u64)).unwrap();
            let (part, _) = train(&init, &d.column(k), &opts).unwrap();
            for x in [[0.1, -0.3], [0.9, 0.9], [-1.0, 0.2]] {
                assert_eq!(merged.forward(&x).unwrap()[k], part.forward(&x).unwrap()[0]);
            }
        }
    }

    #[test]
    fn structured_normal_equations_match_dense() {
        let mut d = TrainingData::new(3, 2);
        let mut rng = crate::seed::rng(12);
        for _ in 0..300 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            d.push(&x, &[x[0] * x[1], x[2].sin()]);
        }
        let mut m = MlpModel::init(3, 5, 2, 1).unwrap();
        m.b1 = vec![0.1, -0.2, 0.3, 0.0, 0.05];
        m.b2 = vec![0.4, -0.1];
        let set = normalize(&d, &Normalizer::identity(3), &Normalizer::identity(2));
        let mut fwd = Forward::default();
        forward_all(&m, &set, &mut fwd);
        let (jtj, g) = normal_equations(&m, &set, &fwd);
        let p = m.n_params();
        let mut dense = vec![0.0; p * p];
        let mut grad = vec![0.0; p];
        let mut jac = vec![0.0; 2 * p];
        let (mut hidden, mut out) = (vec![0.0; 5], vec![0.0; 2]);
        for i in 0..set.n {
            let xn = &set.x[i * 3..(i + 1) * 3];
            m.forward_normalized(xn, &mut hidden, &mut out);
            m.jacobian_normalized_into(xn, &hidden, &mut jac);
            for k in 0..2 {
                let row = &jac[k * p..(k + 1) * p];
                let e = out[k] - set.t[i * 2 + k];
                for a in 0..p {
                    grad[a] += row[a] * e;
                    for b in 0..p {
                        dense[a * p + b] += row[a] * row[b];
                    }
                }
            }
        }
        for (x, y) in jtj.iter().zip(&dense) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
        for (x, y) in g.iter().zip(&grad) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn decimate_keeps_even_spacing() {
        let d = linear_data(100);
        let s = d.decimate(10);
        assert_eq!(s.len(), 10);
        assert_eq!(s.input(0), d.input(0));
        assert_eq!(s.input(1), d.input(10));
        assert_eq!(d.decimate(1000).len(), 100);
    }
}
