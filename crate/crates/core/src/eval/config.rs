use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ircal::Orientation;
use crate::mlp::TrainOptions;
use crate::sim::SimConfig;
use crate::trajgen::{Axis, Trajectory, Waypoint, Workspace};

use super::metrics::DispersionMode;
use super::EvalError;

pub const SPIRAL: &str = "spiral";
pub const GRID_X: &str = "grid-x";
pub const GRID_Y: &str = "grid-y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestProfiles {
    pub depth_mm: f64,
    pub offset_mm: f64,
    /// Duration of Tests 1-5.
    pub duration_s: f64,
    /// Duration of the offset Tests 6-7.
    pub offset_duration_s: f64,
}

impl Default for TestProfiles {
    fn default() -> Self {
        TestProfiles { depth_mm: 20.0, offset_mm: 6.0, duration_s: 4.0, offset_duration_s: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpiralDef {
    pub r_max_mm: f64,
    pub depth_mm: f64,
    pub turns: u32,
    /// Descent time; the return to the origin takes as long again.
    pub duration_s: f64,
}

impl Default for SpiralDef {
    fn default() -> Self {
        SpiralDef { r_max_mm: 6.0, depth_mm: 20.0, turns: 5, duration_s: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridDef {
    pub depth_mm: f64,
    pub duration_s: f64,
    /// `None` uses the default nine-site grid.
    pub sites: Option<Vec<[f64; 2]>>,
}

impl Default for GridDef {
    fn default() -> Self {
        GridDef { depth_mm: 20.0, duration_s: 60.0, sites: None }
    }
}

/// Named trajectory definitions. `spiral`, `grid-x` and `grid-y` are built
/// in; `custom` adds waypoint lists under further names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryDefs {
    pub workspace: Workspace,
    pub tests: TestProfiles,
    pub spiral: SpiralDef,
    pub grid: GridDef,
    pub custom: BTreeMap<String, Vec<Waypoint>>,
}

impl TrajectoryDefs {
    pub fn resolve(&self, name: &str) -> Result<Trajectory, EvalError> {
        let ws = &self.workspace;
        let grid = |axis| {
            let sites: Vec<(f64, f64)> = match &self.grid.sites {
                Some(s) => s.iter().map(|p| (p[0], p[1])).collect(),
                None => ws.default_grid_sites(),
            };
            ws.vertical_grid(&sites, self.grid.depth_mm, axis, self.grid.duration_s)
        };
        let traj = match name {
            SPIRAL => {
                let s = &self.spiral;
                ws.spiral(s.r_max_mm, s.depth_mm, s.turns, s.duration_s)?
            }
            GRID_X => grid(Axis::X)?,
            GRID_Y => grid(Axis::Y)?,
            other => {
                let wps = self.custom.get(other).ok_or_else(|| EvalError::UnknownTrajectory(other.to_string()))?;
                let t = Trajectory::new(other, wps.clone())?;
                t.check_workspace(ws)?;
                t
            }
        };
        Ok(traj)
    }

    pub fn test(&self, id: u32) -> Result<Trajectory, EvalError> {
        let t = &self.tests;
        let duration = if id >= 6 { t.offset_duration_s } else { t.duration_s };
        Ok(self.workspace.test_profile(id, t.depth_mm, t.offset_mm, duration)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub options: TrainOptions,
    pub hidden: usize,
    /// Train one single-output network per axis instead of one 3-output network.
    pub per_axis: bool,
    pub full_set: Vec<String>,
    pub spiral_set: Vec<String>,
    /// Rows kept after evenly decimating a concatenated training set.
    pub max_samples: usize,
    pub ir_hidden: usize,
    pub ir_crossover_mm: f64,
    /// Compression at which the magnet is sized by `calibrate_moment`;
    /// `None` keeps `sim.moment_am2`.
    pub calibrate_depth_mm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            options: TrainOptions::default(),
            hidden: 15,
            per_axis: false,
            full_set: vec![GRID_X.into(), GRID_Y.into(), SPIRAL.into()],
            spiral_set: vec![SPIRAL.into()],
            max_samples: 20_000,
            ir_hidden: 10,
            ir_crossover_mm: 18.0,
            calibrate_depth_mm: Some(20.0),
        }
    }
}

/// A user-defined evaluation test backed by a named trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraTest {
    pub id: u32,
    pub trajectory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub tests: Vec<u32>,
    pub extra_tests: Vec<ExtraTest>,
    pub buffer_len: usize,
    pub neuron_sizes: Vec<usize>,
    pub seeds_per_size: usize,
    pub filter_buffers: Vec<usize>,
    pub tilt_angles: Vec<f64>,
    pub dispersion: DispersionMode,
    pub ir_piecewise_orientation: Orientation,
    pub ir_near_mm: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            tests: (1..=7).collect(),
            extra_tests: Vec::new(),
            buffer_len: 20,
            neuron_sizes: vec![5, 10, 15, 20, 30],
            seeds_per_size: 3,
            filter_buffers: vec![0, 10, 20, 30, 40],
            tilt_angles: vec![0.0, 5.0, 10.0],
            dispersion: DispersionMode::AbsError,
            ir_piecewise_orientation: Orientation::AsPrinted,
            ir_near_mm: 18.0,
        }
    }
}

/// Everything a study needs besides the master seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiment {
    pub sim: SimConfig,
    pub trajectories: TrajectoryDefs,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl Experiment {
    /// Field-path diagnostics for every violated invariant or unresolved reference.
    pub fn diagnostics(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> =
            self.sim.diagnostics().into_iter().map(|(p, m)| (format!("sim.{p}"), m)).collect();
        let mut bad = |path: &str, msg: String| out.push((path.to_string(), msg));
        let names = self.training.full_set.iter().map(|n| ("training.full_set", n));
        let names = names.chain(self.training.spiral_set.iter().map(|n| ("training.spiral_set", n)));
        let names = names.chain(self.evaluation.extra_tests.iter().map(|e| ("evaluation.extra_tests", &e.trajectory)));
        for (path, name) in names {
            if let Err(e) = self.trajectories.resolve(name) {
                bad(path, e.to_string());
            }
        }
        for &id in &self.evaluation.tests {
            if let Err(e) = self.trajectories.test(id) {
                bad("evaluation.tests", e.to_string());
            }
        }
        for extra in &self.evaluation.extra_tests {
            if self.evaluation.tests.contains(&extra.id) {
                bad("evaluation.extra_tests", format!("test id {} is already used", extra.id));
            }
        }
        if self.evaluation.tests.is_empty() && self.evaluation.extra_tests.is_empty() {
            bad("evaluation.tests", "no tests selected".into());
        }
        if self.training.full_set.is_empty() {
            bad("training.full_set", "empty training set".into());
        }
        if self.training.spiral_set.is_empty() {
            bad("training.spiral_set", "empty training set".into());
        }
        if let Err(e) = self.training.options.validate() {
            bad("training.options", e.to_string());
        }
        if self.training.hidden == 0 || self.training.ir_hidden == 0 {
            bad("training.hidden", "hidden sizes must be >= 1".into());
        }
        if self.training.max_samples == 0 {
            bad("training.max_samples", "must be >= 1".into());
        }
        if let Some(d) = self.training.calibrate_depth_mm {
            if !(0.0..=self.trajectories.workspace.z_max).contains(&d) {
                bad("training.calibrate_depth_mm", format!("{d} outside [0, z_max]"));
            }
        }
        let ev = &self.evaluation;
        if ev.neuron_sizes.is_empty() || !strictly_increasing(&ev.neuron_sizes) || ev.neuron_sizes.contains(&0) {
            bad("evaluation.neuron_sizes", "must be nonempty, positive and strictly increasing".into());
        }
        if ev.seeds_per_size == 0 {
            bad("evaluation.seeds_per_size", "must be >= 1".into());
        }
        if ev.filter_buffers.is_empty() || !strictly_increasing(&ev.filter_buffers) {
            bad("evaluation.filter_buffers", "must be nonempty and strictly increasing".into());
        }
        if ev.tilt_angles.is_empty()
            || !strictly_increasing(&ev.tilt_angles)
            || ev.tilt_angles.iter().any(|a| a.abs() > crate::trajgen::MAX_TILT_DEG)
        {
            bad("evaluation.tilt_angles", "must be nonempty, strictly increasing and within the tilt range".into());
        }
        if !ev.tilt_angles.contains(&0.0) {
            bad("evaluation.tilt_angles", "must include 0".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        match self.diagnostics().into_iter().next() {
            None => Ok(()),
            Some((path, msg)) => Err(EvalError::Config(format!("{path}: {msg}"))),
        }
    }

    /// Test ids in evaluation order.
    pub fn test_ids(&self) -> Vec<u32> {
        let mut ids = self.evaluation.tests.clone();
        ids.extend(self.evaluation.extra_tests.iter().map(|e| e.id));
        ids
    }

    pub fn test_trajectory(&self, id: u32) -> Result<Trajectory, EvalError> {
        match self.evaluation.extra_tests.iter().find(|e| e.id == id) {
            Some(extra) => self.trajectories.resolve(&extra.trajectory),
            None => self.trajectories.test(id),
        }
    }
}
