//! Two-layer feed-forward network: tanh hidden layer, identity output, with
//! per-channel input/output normalization.
//!
//! Parameters are flattened as `W1` (row-major, `n_hidden x n_in`), `b1`,
//! `W2` (row-major, `n_out x n_hidden`), `b2`. Both [`MlpModel::params`] and
//! [`MlpModel::jacobian`] use this order.

mod norm;
mod train;

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use norm::Normalizer;
pub use train::{
    train, train_per_axis, Regularization, StopReason, TrainError, TrainHistory, TrainOptions, TrainRecord,
    TrainingData,
};

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("layer sizes must be >= 1, got {n_in}-{n_hidden}-{n_out}")]
    ZeroSize { n_in: usize, n_hidden: usize, n_out: usize },
    #[error("input has length {got}, network expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("model file version {0:?} is not supported")]
    Version(String),
    #[error("inconsistent model shape: {0}")]
    Shape(String),
    #[error("unsupported activation {0:?}")]
    Activation(String),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activations {
    pub hidden: String,
    pub output: String,
}

impl Default for Activations {
    fn default() -> Self {
        Activations { hidden: "tanh".into(), output: "identity".into() }
    }
}

/// Provenance carried with a trained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub label: String,
    pub seed: u64,
    pub options: Option<TrainOptions>,
    /// Final training MSE in normalized output units.
    pub final_train_mse: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub in_norm: Normalizer,
    pub out_norm: Normalizer,
    pub meta: ModelMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    shape: Shape,
    activations: Activations,
    in_norm: Normalizer,
    out_norm: Normalizer,
    #[serde(rename = "W1")]
    w1: Vec<f64>,
    b1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<f64>,
    b2: Vec<f64>,
    meta: ModelMeta,
}

/// Per-sample scratch for forward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    xn: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl MlpModel {
    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases,
    /// identity normalization.
    pub fn init(n_in: usize, n_hidden: usize, n_out: usize, seed: u64) -> Result<Self, MlpError> {
        if n_in == 0 || n_hidden == 0 || n_out == 0 {
            return Err(MlpError::ZeroSize { n_in, n_hidden, n_out });
        }
        let mut rng = crate::seed::rng(seed);
        let mut draw = |fan_in: usize, n: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let w1 = draw(n_in, n_hidden * n_in);
        let w2 = draw(n_hidden, n_out * n_hidden);
        Ok(MlpModel {
            n_in,
            n_hidden,
            n_out,
            w1,
            b1: vec![0.0; n_hidden],
            w2,
            b2: vec![0.0; n_out],
            in_norm: Normalizer::identity(n_in),
            out_norm: Normalizer::identity(n_out),
            meta: ModelMeta { seed, ..ModelMeta::default() },
        })
    }

    pub fn shape(&self) -> Shape {
        Shape { n_in: self.n_in, n_hidden: self.n_hidden, n_out: self.n_out }
    }

    pub fn n_params(&self) -> usize {
        self.n_hidden * (self.n_in + 1) + self.n_out * (self.n_hidden + 1)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    /// Panics if `p.len() != n_params()`.
    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let (w1, rest) = p.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.n_hidden);
        let (w2, b2) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2.copy_from_slice(b2);
    }

    pub fn workspace(&self) -> Workspace {
        Workspace { xn: vec![0.0; self.n_in], hidden: vec![0.0; self.n_hidden], out: vec![0.0; self.n_out] }
    }

    /// Hidden activations and normalized outputs for a normalized input.
    pub(crate) fn forward_normalized(&self, xn: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &self.w1[j * self.n_in..(j + 1) * self.n_in];
            let s: f64 = row.iter().zip(xn).map(|(w, x)| w * x).sum::<f64>() + self.b1[j];
            *h = s.tanh();
        }
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.w2[k * self.n_hidden..(k + 1) * self.n_hidden];
            *o = row.iter().zip(hidden.iter()).map(|(w, h)| w * h).sum::<f64>() + self.b2[k];
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), MlpError> {
        if x.len() != self.n_in {
            return Err(MlpError::InputLength { expected: self.n_in, got: x.len() });
        }
        Ok(())
    }

    /// Allocation-free forward pass; `out` receives denormalized outputs.
    pub fn forward_into(&self, x: &[f64], ws: &mut Workspace, out: &mut [f64]) -> Result<(), MlpError> {
        self.check_input(x)?;
        self.in_norm.apply(x, &mut ws.xn);
        self.forward_normalized(&ws.xn, &mut ws.hidden, &mut ws.out);
        self.out_norm.invert(&ws.out, out);
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.n_out];
        self.forward_into(x, &mut ws, &mut out)?;
        Ok(out)
    }

    /// Jacobian rows of the normalized outputs, written row-major into `jac`
    /// (`n_out x n_params`). `hidden` must hold the activations for `xn`.
    pub(crate) fn jacobian_normalized_into(&self, xn: &[f64], hidden: &[f64], jac: &mut [f64]) {
        let (n_in, nh, p) = (self.n_in, self.n_hidden, self.n_params());
        let b1_off = nh * n_in;
        let w2_off = b1_off + nh;
        let b2_off = w2_off + self.n_out * nh;
        jac.fill(0.0);
        for k in 0..self.n_out {
            let row = &mut jac[k * p..(k + 1) * p];
            for j in 0..nh {
                let delta = self.w2[k * nh + j] * (1.0 - hidden[j] * hidden[j]);
                for i in 0..n_in {
                    row[j * n_in + i] = delta * xn[i];
                }
                row[b1_off + j] = delta;
                row[w2_off + k * nh + j] = hidden[j];
            }
            row[b2_off + k] = 1.0;
        }
    }

    /// Derivative of each denormalized output with respect to every
    /// parameter, `n_out x n_params`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, MlpError> {
        self.check_input(x)?;
        let mut ws = self.workspace();
        self.in_norm.apply(x, &mut ws.xn);
        self.forward_normalized(&ws.xn, &mut ws.hidden, &mut ws.out);
        let p = self.n_params();
        let mut jac = vec![0.0; self.n_out * p];
        self.jacobian_normalized_into(&ws.xn, &ws.hidden, &mut jac);
        for k in 0..self.n_out {
            let s = self.out_norm.scale(k);
            jac[k * p..(k + 1) * p].iter_mut().for_each(|v| *v *= s);
        }
        Ok(DMatrix::from_row_slice(self.n_out, p, &jac))
    }

    /// Largest relative gap between [`MlpModel::jacobian`] and central
    /// differences of [`MlpModel::forward`] with step `h`. Each entry is
    /// scaled by `max(|analytic|, |numeric|, floor)`.
    pub fn jacobian_fd_error(&self, x: &[f64], h: f64, floor: f64) -> Result<f64, MlpError> {
        let analytic = self.jacobian(x)?;
        let base = self.params();
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params(&p);
            let plus = probe.forward(x)?;
            p[i] = base[i] - h;
            probe.set_params(&p);
            let minus = probe.forward(x)?;
            for k in 0..self.n_out {
                let numeric = (plus[k] - minus[k]) / (2.0 * h);
                let a = analytic[(k, i)];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
            }
        }
        Ok(worst)
    }

    pub fn weight_norm(&self) -> f64 {
        self.params().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let shape_err = |msg: String| Err(MlpError::Shape(msg));
        if self.n_in == 0 || self.n_hidden == 0 || self.n_out == 0 {
            return shape_err(format!("zero layer size {}-{}-{}", self.n_in, self.n_hidden, self.n_out));
        }
        let checks = [
            ("W1", self.w1.len(), self.n_hidden * self.n_in),
            ("b1", self.b1.len(), self.n_hidden),
            ("W2", self.w2.len(), self.n_out * self.n_hidden),
            ("b2", self.b2.len(), self.n_out),
            ("in_norm", self.in_norm.width(), self.n_in),
            ("out_norm", self.out_norm.width(), self.n_out),
        ];
        for (name, got, expected) in checks {
            if got != expected {
                return shape_err(format!("{name} has {got} entries, expected {expected}"));
            }
        }
        if !self.in_norm.is_valid() || !self.out_norm.is_valid() {
            return shape_err("normalization ranges must be finite with max >= min".into());
        }
        if !self.params().iter().all(|v| v.is_finite()) {
            return shape_err("non-finite weight".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, MlpError> {
        let file = ModelFile {
            version: crate::FORMAT_VERSION.to_string(),
            shape: self.shape(),
            activations: Activations::default(),
            in_norm: self.in_norm.clone(),
            out_norm: self.out_norm.clone(),
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, MlpError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("version").and_then(|v| v.as_str()).unwrap_or_default();
        if version != crate::FORMAT_VERSION {
            return Err(MlpError::Version(version.to_string()));
        }
        let file: ModelFile = serde_json::from_value(value)?;
        let defaults = Activations::default();
        if file.activations.hidden != defaults.hidden {
            return Err(MlpError::Activation(file.activations.hidden));
        }
        if file.activations.output != defaults.output {
            return Err(MlpError::Activation(file.activations.output));
        }
        let model = MlpModel {
            n_in: file.shape.n_in,
            n_hidden: file.shape.n_hidden,
            n_out: file.shape.n_out,
            w1: file.w1,
            b1: file.b1,
            w2: file.w2,
            b2: file.b2,
            in_norm: file.in_norm,
            out_norm: file.out_norm,
            meta: file.meta,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), MlpError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MlpError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
