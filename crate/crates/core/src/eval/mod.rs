//! Error statistics, test-suite evaluation and the study runners.

mod config;
mod metrics;
mod studies;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::{MlpError, MlpModel, TrainError};
use crate::pipeline::{HePipeline, IrMethod, IrModels, PipelineError};
use crate::sim::{LabeledDataset, SimConfig, SimError};
use crate::trajgen::{apply_tilt, resample, Trajectory, TrajError};

pub use config::{
    EvaluationConfig, Experiment, ExtraTest, GridDef, SpiralDef, TestProfiles, TrainingConfig, TrajectoryDefs, GRID_X,
    GRID_Y, SPIRAL,
};
pub use metrics::{rmse_stdev, DispersionMode, ErrorStats};
pub use studies::{
    DesensitizationStudy, IrStudy, IrTestStats, Lab, NeuronSweep, TrainingComparison, TrainingSet,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("error sequence is empty")]
    EmptyErrors,
    #[error("estimator returned {got} estimates for {expected} frames")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown trajectory {0:?}")]
    UnknownTrajectory(String),
    #[error("unknown training set {0:?} (expected full, spiral or desensitized)")]
    UnknownTrainingSet(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("model is untrained")]
    Untrained,
    #[error("no tests to evaluate")]
    NoTests,
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Fit(#[from] crate::ircal::FitError),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that turns a labeled test stream into `(x, y, z)` estimates.
pub trait Estimator {
    fn estimate(&mut self, ds: &LabeledDataset) -> Result<Vec<[f64; 3]>, EvalError>;
}

/// Reports the ground truth; every error is zero.
pub struct TruthOracle;

impl Estimator for TruthOracle {
    fn estimate(&mut self, ds: &LabeledDataset) -> Result<Vec<[f64; 3]>, EvalError> {
        Ok(ds.truth.iter().map(|p| [p.x, p.y, p.z]).collect())
    }
}

impl Estimator for HePipeline {
    fn estimate(&mut self, ds: &LabeledDataset) -> Result<Vec<[f64; 3]>, EvalError> {
        if self.model().meta.final_train_mse.is_none() {
            return Err(EvalError::Untrained);
        }
        Ok(self.run(&ds.frames)?)
    }
}

/// IR estimator: lateral estimates are reported as 0 and only `z` is meaningful.
pub struct IrEstimator<'a> {
    pub models: &'a IrModels,
    pub method: IrMethod,
}

impl Estimator for IrEstimator<'_> {
    fn estimate(&mut self, ds: &LabeledDataset) -> Result<Vec<[f64; 3]>, EvalError> {
        let h0 = ds.manifest.config.h0_mm;
        ds.frames
            .iter()
            .map(|f| Ok([0.0, 0.0, h0 - self.models.distance(f.ir_counts, self.method)?]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub x: ErrorStats,
    pub y: ErrorStats,
    pub z: ErrorStats,
}

impl AxisStats {
    pub fn rmse(&self) -> [f64; 3] {
        [self.x.rmse, self.y.rmse, self.z.rmse]
    }

    pub fn from_errors(errors: &[[f64; 3]], mode: DispersionMode) -> Result<Self, EvalError> {
        let axis = |k: usize| rmse_stdev(&errors.iter().map(|e| e[k]).collect::<Vec<_>>(), mode);
        Ok(AxisStats { x: axis(0)?, y: axis(1)?, z: axis(2)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub label: String,
    pub tilt_deg: f64,
    pub per_test: BTreeMap<u32, AxisStats>,
    /// Mean of the per-test per-axis RMSE values.
    pub aggregate_rmse: f64,
    pub dispersion: DispersionMode,
    pub config_digest: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn mean_rmse(&self) -> [f64; 3] {
        let n = self.per_test.len() as f64;
        let mut acc = [0.0; 3];
        for s in self.per_test.values() {
            for (a, r) in acc.iter_mut().zip(s.rmse()) {
                *a += r / n;
            }
        }
        acc
    }

    /// Mean over tests of the per-axis STDEV.
    pub fn mean_stdev(&self) -> [f64; 3] {
        let n = self.per_test.len() as f64;
        let mut acc = [0.0; 3];
        for s in self.per_test.values() {
            for (a, v) in acc.iter_mut().zip([s.x.stdev, s.y.stdev, s.z.stdev]) {
                *a += v / n;
            }
        }
        acc
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["test", "rmse_x", "std_x", "rmse_y", "std_y", "rmse_z", "std_z"])?;
        for (id, s) in &self.per_test {
            let mut rec = vec![id.to_string()];
            for a in [s.x, s.y, s.z] {
                rec.push(a.rmse.to_string());
                rec.push(a.stdev.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Aggregate RMSE as a function of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub parameter: String,
    pub values: Vec<usize>,
    pub aggregate_rmse: Vec<f64>,
}

impl SweepCurve {
    pub fn at(&self, value: usize) -> Option<f64> {
        self.values.iter().position(|&v| v == value).map(|i| self.aggregate_rmse[i])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([self.parameter.as_str(), "aggregate_rmse_mm"])?;
        for (v, r) in self.values.iter().zip(&self.aggregate_rmse) {
            w.write_record([v.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulation seed of a test: depends on the master seed and test id only,
/// so tilted variants share the noise stream of their untilted test.
pub fn test_seed(master: u64, id: u32) -> u64 {
    crate::seed::derive(master, "test", u64::from(id))
}

/// Simulates one test trajectory, optionally tilted.
pub fn simulate_test(traj: &Trajectory, id: u32, tilt_deg: f64, sim: &SimConfig, master: u64) -> Result<LabeledDataset, EvalError> {
    let traj = apply_tilt(traj, tilt_deg)?;
    let cfg = SimConfig { seed: test_seed(master, id), ..sim.clone() };
    Ok(crate::sim::simulate(&resample(&traj, cfg.adc_rate_hz)?, &cfg)?)
}

/// Runs `est` over every `(id, dataset)` pair and tabulates per-axis errors.
pub fn evaluate(
    est: &mut dyn Estimator,
    tests: &[(u32, LabeledDataset)],
    dispersion: DispersionMode,
) -> Result<BTreeMap<u32, AxisStats>, EvalError> {
    if tests.is_empty() {
        return Err(EvalError::NoTests);
    }
    let mut per_test = BTreeMap::new();
    for (id, ds) in tests {
        let est_xyz = est.estimate(ds)?;
        if est_xyz.len() != ds.len() {
            return Err(EvalError::LengthMismatch { expected: ds.len(), got: est_xyz.len() });
        }
        let errors: Vec<[f64; 3]> =
            est_xyz.iter().zip(&ds.truth).map(|(e, p)| [e[0] - p.x, e[1] - p.y, e[2] - p.z]).collect();
        per_test.insert(*id, AxisStats::from_errors(&errors, dispersion)?);
    }
    Ok(per_test)
}

pub fn aggregate_rmse(per_test: &BTreeMap<u32, AxisStats>) -> f64 {
    let values: Vec<f64> = per_test.values().flat_map(|s| s.rmse()).collect();
    values.iter().sum::<f64>() / values.len() as f64
}

/// HE pipeline for a trained model with the given filter length.
pub fn he_pipeline(model: &MlpModel, buffer_len: usize) -> Result<HePipeline, EvalError> {
    Ok(HePipeline::new(model.clone(), buffer_len)?)
}
