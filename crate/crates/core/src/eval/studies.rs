use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::ircal::{fit_log, fit_piecewise, samples_from_dataset, ComplementModel, LogFit, PiecewiseFit, PiecewiseModel};
use crate::mlp::{train, train_per_axis, MlpModel, TrainOptions, TrainingData};
use crate::pipeline::{IrMethod, IrModels};
use crate::sim::{calibrate_moment, simulate, LabeledDataset, SimConfig, N_HALL};
use crate::trajgen::{apply_tilt, resample};

use super::{
    aggregate_rmse, evaluate, he_pipeline, rmse_stdev, simulate_test, AxisStats, ErrorStats, Estimator, EvalError,
    EvalReport, Experiment, IrEstimator, SweepCurve,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingSet {
    /// Vertical grids plus spiral, untilted.
    Full,
    Spiral,
    /// The full set repeated at every evaluation tilt angle.
    Desensitized,
}

impl TrainingSet {
    pub const ALL: [TrainingSet; 3] = [TrainingSet::Full, TrainingSet::Spiral, TrainingSet::Desensitized];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingSet::Full => "full",
            TrainingSet::Spiral => "spiral",
            TrainingSet::Desensitized => "desensitized",
        }
    }
}

impl fmt::Display for TrainingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingSet {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TrainingSet::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| EvalError::UnknownTrainingSet(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronSweep {
    /// Minimum aggregate RMSE over the seeds of each size.
    pub curve: SweepCurve,
    /// `per_seed[i][s]`: aggregate RMSE of size `i`, seed index `s`.
    pub per_seed: Vec<Vec<f64>>,
    /// Final normalized training MSE, same layout as `per_seed`.
    pub train_mse: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingComparison {
    pub full: EvalReport,
    pub spiral: EvalReport,
    /// Per test, `RMSE_spiral - RMSE_full` for x, y, z.
    pub delta: BTreeMap<u32, [f64; 3]>,
    /// Mean over tests of `100 * (RMSE_spiral - RMSE_full) / RMSE_full`.
    pub percent_more_error: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesensitizationStudy {
    pub angles: Vec<f64>,
    /// Network trained on every angle, one report per test angle.
    pub desensitized: Vec<EvalReport>,
    /// Network trained at 0 degrees only, one report per test angle.
    pub baseline: Vec<EvalReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrTestStats {
    pub full: ErrorStats,
    /// Restricted to true rangefinder distances at or below the near threshold.
    pub near: Option<ErrorStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrStudy {
    pub version: String,
    pub near_mm: f64,
    pub per_test: BTreeMap<u32, BTreeMap<IrMethod, IrTestStats>>,
    pub config_digest: String,
    pub seed: u64,
}

/// Runs the studies for one experiment and master seed, caching simulated
/// data and trained networks so studies can share them.
pub struct Lab {
    exp: Experiment,
    seed: u64,
    sim: SimConfig,
    digest: String,
    training: HashMap<TrainingSet, Rc<TrainingData>>,
    models: BTreeMap<(TrainingSet, usize, usize), Rc<MlpModel>>,
    suites: HashMap<u64, Rc<Vec<(u32, LabeledDataset)>>>,
    ir_nn: Option<Rc<MlpModel>>,
}

impl Lab {
    pub fn new(exp: Experiment, seed: u64) -> Result<Self, EvalError> {
        exp.validate()?;
        let mut sim = exp.sim.clone();
        if let Some(depth) = exp.training.calibrate_depth_mm {
            sim.moment_am2 = calibrate_moment(&sim, depth)?;
        }
        let digest = crate::seed::digest_hex(&serde_json::to_vec(&exp).map_err(|e| EvalError::Config(e.to_string()))?);
        Ok(Lab {
            exp,
            seed,
            sim,
            digest,
            training: HashMap::new(),
            models: BTreeMap::new(),
            suites: HashMap::new(),
            ir_nn: None,
        })
    }

    pub fn experiment(&self) -> &Experiment {
        &self.exp
    }

    /// Simulator config in effect, with the calibrated moment.
    pub fn sim(&self) -> &SimConfig {
        &self.sim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config_digest(&self) -> &str {
        &self.digest
    }

    /// Simulated training trajectory. The noise seed depends on the
    /// (tilted) trajectory label, so the untilted part of every set is shared.
    pub fn training_dataset(&self, name: &str, tilt_deg: f64) -> Result<LabeledDataset, EvalError> {
        let traj = apply_tilt(&self.exp.trajectories.resolve(name)?, tilt_deg)?;
        let cfg = SimConfig { seed: crate::seed::derive(self.seed, &format!("train/{}", traj.label()), 0), ..self.sim.clone() };
        Ok(simulate(&resample(&traj, cfg.adc_rate_hz)?, &cfg)?)
    }

    fn set_datasets(&self, set: TrainingSet) -> Result<Vec<LabeledDataset>, EvalError> {
        let t = &self.exp.training;
        let (names, angles): (&[String], Vec<f64>) = match set {
            TrainingSet::Full => (&t.full_set, vec![0.0]),
            TrainingSet::Spiral => (&t.spiral_set, vec![0.0]),
            TrainingSet::Desensitized => (&t.full_set, self.exp.evaluation.tilt_angles.clone()),
        };
        let mut out = Vec::new();
        for &angle in &angles {
            for name in names {
                out.push(self.training_dataset(name, angle)?);
            }
        }
        Ok(out)
    }

    /// HE codes to `(x, y, z)` rows, evenly decimated to `max_samples`.
    pub fn training_data(&mut self, set: TrainingSet) -> Result<Rc<TrainingData>, EvalError> {
        if let Some(d) = self.training.get(&set) {
            return Ok(Rc::clone(d));
        }
        let mut data = TrainingData::new(N_HALL, 3);
        for ds in self.set_datasets(set)? {
            for (f, p) in ds.frames.iter().zip(&ds.truth) {
                data.push(&f.he_codes.map(f64::from), &[p.x, p.y, p.z]);
            }
        }
        let data = Rc::new(data.decimate(self.exp.training.max_samples));
        self.training.insert(set, Rc::clone(&data));
        Ok(data)
    }

    /// Rangefinder counts to distance rows from the full untilted set.
    pub fn ir_training_data(&self) -> Result<TrainingData, EvalError> {
        let mut data = TrainingData::new(1, 1);
        for ds in self.set_datasets(TrainingSet::Full)? {
            for s in samples_from_dataset(&ds) {
                data.push(&[s.counts], &[s.distance_mm]);
            }
        }
        Ok(data.decimate(self.exp.training.max_samples))
    }

    pub fn train_options(&self) -> TrainOptions {
        let opts = &self.exp.training.options;
        TrainOptions { seed: crate::seed::derive(self.seed, "split", opts.seed), ..opts.clone() }
    }

    /// Initial-weight seed shared by every training set, so networks of the
    /// same size and seed index start identically.
    pub fn init_seed(&self, hidden: usize, seed_index: usize) -> u64 {
        crate::seed::derive(self.seed, &format!("init/h{hidden}"), seed_index as u64)
    }

    pub fn he_model(&mut self, set: TrainingSet, hidden: usize, seed_index: usize) -> Result<Rc<MlpModel>, EvalError> {
        if let Some(m) = self.models.get(&(set, hidden, seed_index)) {
            return Ok(Rc::clone(m));
        }
        let data = self.training_data(set)?;
        let opts = self.train_options();
        let init_seed = self.init_seed(hidden, seed_index);
        let mut model = if self.exp.training.per_axis {
            train_per_axis(hidden, &data, &opts, init_seed)?.0
        } else {
            train(&MlpModel::init(N_HALL, hidden, 3, init_seed)?, &data, &opts)?.0
        };
        model.meta.label = format!("he-{}-h{hidden}-s{seed_index}", set.as_str());
        model.meta.seed = init_seed;
        let model = Rc::new(model);
        self.models.insert((set, hidden, seed_index), Rc::clone(&model));
        Ok(model)
    }

    /// The primary network: configured size, first seed.
    pub fn primary_model(&mut self, set: TrainingSet) -> Result<Rc<MlpModel>, EvalError> {
        self.he_model(set, self.exp.training.hidden, 0)
    }

    /// Every trained HE network so far, keyed by label.
    pub fn trained_models(&self) -> Vec<Rc<MlpModel>> {
        self.models.values().cloned().collect()
    }

    pub fn test_suite(&mut self, tilt_deg: f64) -> Result<Rc<Vec<(u32, LabeledDataset)>>, EvalError> {
        if let Some(s) = self.suites.get(&tilt_deg.to_bits()) {
            return Ok(Rc::clone(s));
        }
        let mut suite = Vec::new();
        for id in self.exp.test_ids() {
            let traj = self.exp.test_trajectory(id)?;
            suite.push((id, simulate_test(&traj, id, tilt_deg, &self.sim, self.seed)?));
        }
        let suite = Rc::new(suite);
        self.suites.insert(tilt_deg.to_bits(), Rc::clone(&suite));
        Ok(suite)
    }

    pub fn evaluate_model(&mut self, model: &MlpModel, buffer_len: usize, tilt_deg: f64) -> Result<EvalReport, EvalError> {
        let mut pipeline = he_pipeline(model, buffer_len)?;
        self.evaluate_with(format!("{}-b{buffer_len}", model.meta.label), &mut pipeline, tilt_deg)
    }

    /// Evaluates any estimator on the test suite at `tilt_deg`.
    pub fn evaluate_with(&mut self, label: String, est: &mut dyn Estimator, tilt_deg: f64) -> Result<EvalReport, EvalError> {
        let suite = self.test_suite(tilt_deg)?;
        let per_test = evaluate(est, &suite, self.exp.evaluation.dispersion)?;
        Ok(self.report(label, tilt_deg, per_test))
    }

    fn report(&self, label: String, tilt_deg: f64, per_test: BTreeMap<u32, AxisStats>) -> EvalReport {
        EvalReport {
            version: crate::FORMAT_VERSION.to_string(),
            label,
            tilt_deg,
            aggregate_rmse: aggregate_rmse(&per_test),
            per_test,
            dispersion: self.exp.evaluation.dispersion,
            config_digest: self.digest.clone(),
            seed: self.seed,
        }
    }

    /// One network per size and seed on the full set; the curve keeps the
    /// best seed per size.
    pub fn sweep_neurons(&mut self) -> Result<NeuronSweep, EvalError> {
        let sizes = self.exp.evaluation.neuron_sizes.clone();
        let buffer = self.exp.evaluation.buffer_len;
        let mut per_seed = Vec::with_capacity(sizes.len());
        let mut train_mse = Vec::with_capacity(sizes.len());
        for &h in &sizes {
            let mut rmse = Vec::new();
            let mut mse = Vec::new();
            for s in 0..self.exp.evaluation.seeds_per_size {
                let model = self.he_model(TrainingSet::Full, h, s)?;
                rmse.push(self.evaluate_model(&model, buffer, 0.0)?.aggregate_rmse);
                mse.push(model.meta.final_train_mse.unwrap_or(f64::NAN));
            }
            per_seed.push(rmse);
            train_mse.push(mse);
        }
        let best = per_seed.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect();
        Ok(NeuronSweep {
            curve: SweepCurve { parameter: "hidden_neurons".into(), values: sizes, aggregate_rmse: best },
            per_seed,
            train_mse,
        })
    }

    /// Primary full-set network evaluated at each filter length.
    pub fn sweep_filter(&mut self) -> Result<SweepCurve, EvalError> {
        let model = self.primary_model(TrainingSet::Full)?;
        let buffers = self.exp.evaluation.filter_buffers.clone();
        let mut rmse = Vec::with_capacity(buffers.len());
        for &b in &buffers {
            rmse.push(self.evaluate_model(&model, b, 0.0)?.aggregate_rmse);
        }
        Ok(SweepCurve { parameter: "buffer_len".into(), values: buffers, aggregate_rmse: rmse })
    }

    pub fn compare_training(&mut self) -> Result<TrainingComparison, EvalError> {
        let buffer = self.exp.evaluation.buffer_len;
        let full_model = self.primary_model(TrainingSet::Full)?;
        let spiral_model = self.primary_model(TrainingSet::Spiral)?;
        let full = self.evaluate_model(&full_model, buffer, 0.0)?;
        let spiral = self.evaluate_model(&spiral_model, buffer, 0.0)?;
        Ok(compare_reports(full, spiral))
    }

    pub fn desensitization(&mut self) -> Result<DesensitizationStudy, EvalError> {
        let buffer = self.exp.evaluation.buffer_len;
        let angles = self.exp.evaluation.tilt_angles.clone();
        let desens_model = self.primary_model(TrainingSet::Desensitized)?;
        let base_model = self.primary_model(TrainingSet::Full)?;
        let mut desensitized = Vec::with_capacity(angles.len());
        let mut baseline = Vec::with_capacity(angles.len());
        for &a in &angles {
            desensitized.push(self.evaluate_model(&desens_model, buffer, a)?);
            baseline.push(self.evaluate_model(&base_model, buffer, a)?);
        }
        Ok(DesensitizationStudy { angles, desensitized, baseline })
    }

    /// Piecewise and log regressions fitted to the full untilted training set.
    pub fn fit_ir(&self) -> Result<(PiecewiseFit, LogFit), EvalError> {
        let mut samples = Vec::new();
        for ds in self.set_datasets(TrainingSet::Full)? {
            samples.extend(samples_from_dataset(&ds));
        }
        let crossover = self.exp.training.ir_crossover_mm;
        Ok((fit_piecewise(&samples, crossover)?, fit_log(&samples)?))
    }

    pub fn ir_network(&mut self) -> Result<Rc<MlpModel>, EvalError> {
        if let Some(m) = &self.ir_nn {
            return Ok(Rc::clone(m));
        }
        let data = self.ir_training_data()?;
        let init_seed = crate::seed::derive(self.seed, "init/ir", 0);
        let init = MlpModel::init(1, self.exp.training.ir_hidden, 1, init_seed)?;
        let (mut model, _) = train(&init, &data, &self.train_options())?;
        model.meta.label = format!("ir-h{}", self.exp.training.ir_hidden);
        let model = Rc::new(model);
        self.ir_nn = Some(Rc::clone(&model));
        Ok(model)
    }

    /// Printed piecewise (configured orientation) and complementary
    /// estimators plus the trained IR network.
    pub fn ir_models(&mut self) -> Result<IrModels, EvalError> {
        Ok(IrModels {
            piecewise: Some(PiecewiseModel::printed(self.exp.evaluation.ir_piecewise_orientation)),
            complement: Some(ComplementModel::printed()),
            nn: Some((*self.ir_network()?).clone()),
        })
    }

    pub fn ir_study(&mut self) -> Result<IrStudy, EvalError> {
        let models = self.ir_models()?;
        self.ir_study_with(&models, &IrMethod::ALL)
    }

    /// Untilted rangefinder errors of `methods`, over the full range and
    /// restricted to the near region.
    pub fn ir_study_with(&mut self, models: &IrModels, methods: &[IrMethod]) -> Result<IrStudy, EvalError> {
        let suite = self.test_suite(0.0)?;
        let near_mm = self.exp.evaluation.ir_near_mm;
        let mode = self.exp.evaluation.dispersion;
        let mut per_test = BTreeMap::new();
        for (id, ds) in suite.iter() {
            let h0 = ds.manifest.config.h0_mm;
            let mut row = BTreeMap::new();
            for &method in methods {
                let est = IrEstimator { models, method }.estimate_z(ds)?;
                let errors: Vec<f64> = est.iter().zip(&ds.truth).map(|(z, p)| z - p.z).collect();
                let near: Vec<f64> = errors
                    .iter()
                    .zip(&ds.truth)
                    .filter(|(_, p)| h0 - p.z <= near_mm)
                    .map(|(e, _)| *e)
                    .collect();
                let near = if near.is_empty() { None } else { Some(rmse_stdev(&near, mode)?) };
                row.insert(method, IrTestStats { full: rmse_stdev(&errors, mode)?, near });
            }
            per_test.insert(*id, row);
        }
        Ok(IrStudy {
            version: crate::FORMAT_VERSION.to_string(),
            near_mm,
            per_test,
            config_digest: self.digest.clone(),
            seed: self.seed,
        })
    }
}

impl IrEstimator<'_> {
    fn estimate_z(&mut self, ds: &LabeledDataset) -> Result<Vec<f64>, EvalError> {
        Ok(self.estimate(ds)?.into_iter().map(|e| e[2]).collect())
    }
}

fn stats_fields(rec: &mut Vec<String>, stats: &[ErrorStats]) {
    for s in stats {
        rec.push(s.rmse.to_string());
        rec.push(s.stdev.to_string());
    }
}

fn axis_header(prefix: &str) -> Vec<String> {
    ["x", "y", "z"].iter().flat_map(|a| [format!("{prefix}rmse_{a}"), format!("{prefix}std_{a}")]).collect()
}

impl NeuronSweep {
    /// One row per size: the curve value, then one column per seed.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        let n_seeds = self.per_seed.first().map_or(0, Vec::len);
        let mut header = vec![self.curve.parameter.clone(), "aggregate_rmse_mm".into()];
        header.extend((0..n_seeds).map(|s| format!("seed{s}_rmse_mm")));
        w.write_record(&header)?;
        for (i, v) in self.curve.values.iter().enumerate() {
            let mut rec = vec![v.to_string(), self.curve.aggregate_rmse[i].to_string()];
            rec.extend(self.per_seed[i].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl TrainingComparison {
    /// One row per test: full-set and spiral-set statistics, then deltas;
    /// a final `mean_percent` row holds the per-axis percent-more-error.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["test".to_string()];
        header.extend(axis_header("full_"));
        header.extend(axis_header("spiral_"));
        header.extend(["delta_x", "delta_y", "delta_z"].map(String::from));
        w.write_record(&header)?;
        for (id, f) in &self.full.per_test {
            let s = &self.spiral.per_test[id];
            let mut rec = vec![id.to_string()];
            stats_fields(&mut rec, &[f.x, f.y, f.z, s.x, s.y, s.z]);
            rec.extend(self.delta[id].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        let mut rec = vec!["mean_percent".to_string()];
        rec.extend(std::iter::repeat_n(String::new(), 12));
        rec.extend(self.percent_more_error.iter().map(f64::to_string));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }
}

impl DesensitizationStudy {
    /// One row per network, test angle and test, plus a `mean` row per
    /// network and angle averaging RMSE and STDEV over tests.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["network".to_string(), "tilt_deg".into(), "test".into()];
        header.extend(axis_header(""));
        w.write_record(&header)?;
        for (network, reports) in [("desensitized", &self.desensitized), ("baseline", &self.baseline)] {
            for (angle, report) in self.angles.iter().zip(reports) {
                for (id, s) in &report.per_test {
                    let mut rec = vec![network.to_string(), angle.to_string(), id.to_string()];
                    stats_fields(&mut rec, &[s.x, s.y, s.z]);
                    w.write_record(&rec)?;
                }
                let (rmse, stdev) = (report.mean_rmse(), report.mean_stdev());
                let mut rec = vec![network.to_string(), angle.to_string(), "mean".into()];
                for k in 0..3 {
                    rec.push(rmse[k].to_string());
                    rec.push(stdev[k].to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl IrStudy {
    /// One row per test and method; near-region columns are empty when no
    /// sample falls in the near region.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["test", "method", "rmse_z", "std_z", "n", "near_rmse_z", "near_std_z", "near_n"])?;
        for (id, row) in &self.per_test {
            for (method, s) in row {
                let mut rec = vec![id.to_string(), method.to_string()];
                rec.extend([s.full.rmse.to_string(), s.full.stdev.to_string(), s.full.n.to_string()]);
                match s.near {
                    Some(n) => rec.extend([n.rmse.to_string(), n.stdev.to_string(), n.n.to_string()]),
                    None => rec.extend(std::iter::repeat_n(String::new(), 3)),
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-test deltas and mean percent-more-error of `spiral` over `full`.
pub(crate) fn compare_reports(full: EvalReport, spiral: EvalReport) -> TrainingComparison {
    let mut delta = BTreeMap::new();
    let mut pct = [0.0; 3];
    let n = full.per_test.len() as f64;
    for (id, f) in &full.per_test {
        let s = &spiral.per_test[id];
        let (fr, sr) = (f.rmse(), s.rmse());
        delta.insert(*id, [sr[0] - fr[0], sr[1] - fr[1], sr[2] - fr[2]]);
        for k in 0..3 {
            pct[k] += 100.0 * (sr[k] - fr[k]) / fr[k] / n;
        }
    }
    TrainingComparison { full, spiral, delta, percent_more_error: pct }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_experiment() -> Experiment {
        let mut e = Experiment::default();
        e.trajectories.grid.duration_s = 6.0;
        e.trajectories.spiral.duration_s = 3.0;
        e.trajectories.tests.duration_s = 1.0;
        e.trajectories.tests.offset_duration_s = 1.5;
        e.training.max_samples = 600;
        e.training.options.max_iter = 15;
        e.training.hidden = 4;
        e.evaluation.neuron_sizes = vec![2, 4];
        e.evaluation.seeds_per_size = 2;
        e.evaluation.filter_buffers = vec![0, 10];
        e
    }

    #[test]
    fn training_set_names_round_trip() {
        for set in TrainingSet::ALL {
            assert_eq!(set.to_string().parse::<TrainingSet>().unwrap(), set);
        }
        assert!(matches!("grid".parse::<TrainingSet>(), Err(EvalError::UnknownTrainingSet(_))));
    }

    #[test]
    fn identical_reports_compare_to_zero() {
        let mut lab = Lab::new(small_experiment(), 1).unwrap();
        let m = lab.primary_model(TrainingSet::Full).unwrap();
        let r = lab.evaluate_model(&m, 0, 0.0).unwrap();
        let cmp = compare_reports(r.clone(), r);
        assert!(cmp.delta.values().all(|d| *d == [0.0; 3]));
        assert_eq!(cmp.percent_more_error, [0.0; 3]);
    }

    #[test]
    fn studies_have_expected_shapes_and_reuse_models() {
        let mut lab = Lab::new(small_experiment(), 2).unwrap();
        let sweep = lab.sweep_neurons().unwrap();
        assert_eq!(sweep.curve.values, vec![2, 4]);
        assert_eq!(sweep.per_seed.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2]);
        let filter = lab.sweep_filter().unwrap();
        assert_eq!(filter.aggregate_rmse.len(), 2);
        // the primary full-set model came from the sweep cache
        assert_eq!(lab.trained_models().len(), 4);
        let cmp = lab.compare_training().unwrap();
        assert_eq!(cmp.full.per_test.len(), 7);
        let des = lab.desensitization().unwrap();
        assert_eq!(des.desensitized.len(), 3);
        assert!(des.desensitized[0].per_test.values().all(|s| s.x.rmse.is_finite()));
        assert_eq!(lab.trained_models().len(), 6);
        let ir = lab.ir_study().unwrap();
        assert_eq!(ir.per_test[&1].len(), 3);

        let lines = |write: &dyn Fn(&mut Vec<u8>)| {
            let mut buf = Vec::new();
            write(&mut buf);
            String::from_utf8(buf).unwrap().lines().map(String::from).collect::<Vec<_>>()
        };
        let t2 = lines(&|b| cmp.write_csv(b).unwrap());
        assert_eq!(t2.len(), 1 + 7 + 1);
        assert!(t2[8].starts_with("mean_percent,"));
        assert_eq!(t2[0].split(',').count(), t2[1].split(',').count());
        let t3 = lines(&|b| des.write_csv(b).unwrap());
        assert_eq!(t3.len(), 1 + 2 * 3 * (7 + 1));
        let t1 = lines(&|b| ir.write_csv(b).unwrap());
        assert_eq!(t1.len(), 1 + 7 * 3);
        let f6 = lines(&|b| sweep.write_csv(b).unwrap());
        assert_eq!(f6[0], "hidden_neurons,aggregate_rmse_mm,seed0_rmse_mm,seed1_rmse_mm");
    }

    #[test]
    fn restricted_ir_study_keeps_requested_methods() {
        let mut lab = Lab::new(small_experiment(), 4).unwrap();
        let models = IrModels { piecewise: None, complement: Some(ComplementModel::printed()), nn: None };
        let study = lab.ir_study_with(&models, &[IrMethod::Complement]).unwrap();
        assert!(study.per_test.values().all(|row| row.keys().eq([&IrMethod::Complement])));
        assert!(lab.ir_study_with(&models, &[IrMethod::Nn]).is_err());
    }

    #[test]
    fn lab_is_deterministic() {
        let run = || {
            let mut lab = Lab::new(small_experiment(), 5).unwrap();
            let m = lab.primary_model(TrainingSet::Full).unwrap();
            serde_json::to_string(&lab.evaluate_model(&m, 10, 0.0).unwrap()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn desensitized_set_contains_full_set() {
        let mut lab = Lab::new(small_experiment(), 3).unwrap();
        let full = lab.training_data(TrainingSet::Full).unwrap();
        let e = lab.experiment().clone();
        let raw: usize = e.training.full_set.iter().map(|n| lab.training_dataset(n, 0.0).unwrap().len()).sum();
        assert_eq!(full.len(), raw.min(e.training.max_samples));
        let a = lab.training_dataset("spiral", 0.0).unwrap();
        let b = lab.training_dataset("spiral", 5.0).unwrap();
        assert_ne!(a.manifest.seed, b.manifest.seed);
    }
}
