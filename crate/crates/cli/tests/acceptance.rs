//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line to
//! stderr (uncaptured) and then asserts. Criteria 4-8, 10 and 11 share two
//! `reproduce-all --seed 7` runs made once per process.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use bladdersense_core::eval::{DesensitizationStudy, Experiment, IrStudy, NeuronSweep, SweepCurve, TrainingComparison};
use bladdersense_core::ircal::{ComplementModel, Orientation, PiecewiseModel};
use bladdersense_core::mlp::{MlpModel, Normalizer};
use bladdersense_core::pipeline::IrMethod;
use bladdersense_core::sim::{calibrate_moment, ir_counts, simulate, SimConfig};
use bladdersense_core::trajgen::{resample, Pose, Trajectory, Waypoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

const SEED: &str = "7";
const TIME_BUDGET: Duration = Duration::from_secs(15 * 60);

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{verdict}] C{id:02} {name}: {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

struct Runs {
    _dir: tempfile::TempDir,
    first: PathBuf,
    second: PathBuf,
    elapsed: [Duration; 2],
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Result<Runs, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut elapsed = [Duration::ZERO; 2];
        for (i, name) in ["run1", "run2"].iter().enumerate() {
            let start = Instant::now();
            let out = Command::new(env!("CARGO_BIN_EXE_bladdersense"))
                .args(["reproduce-all", "--seed", SEED, "--out", name])
                .current_dir(dir.path())
                .output()
                .map_err(|e| e.to_string())?;
            elapsed[i] = start.elapsed();
            if !out.status.success() {
                return Err(format!("reproduce-all failed: {}", String::from_utf8_lossy(&out.stderr)));
            }
        }
        Ok(Runs { first: dir.path().join("run1"), second: dir.path().join("run2"), _dir: dir, elapsed })
    })
    .as_ref()
    .expect("reproduce-all runs")
}

fn artifact<T: DeserializeOwned>(name: &str) -> T {
    let path = runs().first.join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn near_line(x: f64) -> f64 {
    -0.03049 * x + 143.2
}

fn far_line(x: f64) -> f64 {
    -0.01226 * x + 66.3
}

#[test]
fn c01_printed_formula_fidelity() {
    let pw = PiecewiseModel::printed(Orientation::AsPrinted);
    let cm = ComplementModel::printed();
    let direct_blend = 0.5 * near_line(4100.0) + 0.5 * far_line(4100.0);
    let checks = [
        ("piecewise(4000)", pw.estimate(4000.0), near_line(4000.0), 21.24),
        ("piecewise(4100)", pw.estimate(4100.0), far_line(4100.0), 16.034),
        ("complement(4100)", cm.estimate(4100.0), direct_blend, 17.1125),
        ("alpha(4100)", cm.alpha(4100.0), 0.5, 0.5),
    ];
    let worst = checks
        .iter()
        .map(|(_, got, direct, printed)| (got - direct).abs().max((got - printed).abs()))
        .fold(0.0, f64::max);
    let values: Vec<String> = checks.iter().map(|(n, got, _, _)| format!("{n}={got}")).collect();
    report(1, "printed-formula fidelity", worst < 1e-9, format!("{}; max deviation {worst:e} (< 1e-9)", values.join(", ")));
}

#[test]
fn c02_complementary_continuity() {
    let cm = ComplementModel::printed();
    let pw = PiecewiseModel::printed(Orientation::AsPrinted);
    let steps = 400_000;
    let mut prev = cm.estimate(3900.0);
    let mut max_step: f64 = 0.0;
    for i in 1..=steps {
        let d = cm.estimate(3900.0 + i as f64 * 0.001);
        max_step = max_step.max((d - prev).abs());
        prev = d;
    }
    let jump = pw.estimate(4100.0 - 1e-9) - pw.estimate(4100.0);
    let pass = max_step < 1e-3 && (jump - 2.157).abs() <= 1e-3;
    report(2, "complementary continuity", pass, format!("max step {max_step:e} mm (< 1e-3), seam jump {jump:.6} mm (2.157 +- 1e-3)"));
}

fn random_model(rng: &mut ChaCha8Rng) -> (MlpModel, Vec<f64>) {
    let (n_in, n_hidden, n_out) = (rng.random_range(1..=6), rng.random_range(1..=20), rng.random_range(1..=3));
    let mut m = MlpModel::init(n_in, n_hidden, n_out, rng.random()).unwrap();
    let p: Vec<f64> = (0..m.n_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
    m.set_params(&p);
    let range = |rng: &mut ChaCha8Rng, w: usize| {
        let min: Vec<f64> = (0..w).map(|_| rng.random_range(-50.0..50.0)).collect();
        let max = min.iter().map(|v| v + rng.random_range(0.5..100.0)).collect();
        Normalizer { min, max }
    };
    m.in_norm = range(rng, n_in);
    m.out_norm = range(rng, n_out);
    let x = (0..n_in).map(|c| rng.random_range(m.in_norm.min[c]..=m.in_norm.max[c])).collect();
    (m, x)
}

#[test]
fn c03_gradient_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let worst = (0..50)
        .map(|_| {
            let (m, x) = random_model(&mut rng);
            m.jacobian_fd_error(&x, 1e-6, 1e-3).unwrap()
        })
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    report(3, "gradient suite", worst < 1e-4 && secs < 10.0, format!("max relative error {worst:e} (< 1e-4) over 50 cases in {secs:.2} s"));
}

#[test]
fn c04_end_to_end_he_accuracy() {
    let cmp: TrainingComparison = artifact("table2_training.json");
    let rmse = cmp.full.per_test[&1].rmse();
    let pass = rmse.iter().all(|&r| r < 0.5);
    report(4, "end-to-end HE accuracy", pass, format!("Test 1 full-set RMSE x/y/z = {rmse:.3?} mm (each < 0.5)"));
}

#[test]
fn c05_training_set_direction() {
    let cmp: TrainingComparison = artifact("table2_training.json");
    let (full, spiral) = (cmp.full.per_test[&1].rmse(), cmp.spiral.per_test[&1].rmse());
    let pass = (0..3).all(|k| spiral[k] > full[k]);
    report(5, "training-set direction", pass, format!("Test 1 spiral {spiral:.3?} vs full {full:.3?} mm (spiral > full on every axis)"));
}

#[test]
fn c06_neuron_sweep_trend() {
    let sweep: NeuronSweep = artifact("fig6_neurons.json");
    let at = |h| sweep.curve.at(h).unwrap();
    let (r5, r10, r15, r30) = (at(5), at(10), at(15), at(30));
    let plateau = (r15 - r30).abs() / r15;
    let pass = r5 > r10 && r10 > r15 && plateau < 0.2;
    report(
        6,
        "neuron sweep trend",
        pass,
        format!("RMSE(5/10/15/30) = {r5:.4}/{r10:.4}/{r15:.4}/{r30:.4} mm, strictly decreasing to 15, |15-30|/15 = {plateau:.3} (< 0.2)"),
    );
}

#[test]
fn c07_filter_sweep_trend() {
    let curve: SweepCurve = artifact("fig7_filter.json");
    let at = |b| curve.at(b).unwrap();
    let (r0, r20) = (at(0), at(20));
    let gains = [30, 40].map(|b| (r20 - at(b)) / r20);
    let pass = r20 < r0 && gains.iter().all(|&g| g < 0.05);
    report(
        7,
        "filter sweep trend",
        pass,
        format!("RMSE(0) = {r0:.4}, RMSE(20) = {r20:.4} mm; improvement of 30/40 over 20 = {:.2}%/{:.2}% (< 5%)", 100.0 * gains[0], 100.0 * gains[1]),
    );
}

#[test]
fn c08_desensitization_direction() {
    let study: DesensitizationStudy = artifact("table3_desensitization.json");
    let y: Vec<f64> = study.desensitized.iter().map(|r| r.mean_rmse()[1]).collect();
    let monotone = y.windows(2).all(|w| w[1] >= w[0]);
    let i10 = study.angles.iter().position(|&a| a == 10.0).expect("10 degree tilt evaluated");
    let (dz, bz) = (study.desensitized[i10].mean_rmse()[2], study.baseline[i10].mean_rmse()[2]);
    report(
        8,
        "desensitization direction",
        monotone && dz < bz,
        format!(
            "desensitized mean y RMSE at {:?} deg = {y:.4?} mm (non-decreasing: {monotone}); 10 deg z: desensitized {dz:.4} vs baseline {bz:.4} mm",
            study.angles
        ),
    );
}

#[test]
fn c09_saturation_criterion() {
    let exp = Experiment::default();
    let depth = exp.training.calibrate_depth_mm.expect("default calibrates the magnet");
    let cfg = SimConfig { moment_am2: calibrate_moment(&exp.sim, depth).unwrap(), ..exp.sim.noise_free() };
    let hold = Pose::new(0.0, 0.0, depth);
    let traj = Trajectory::new("hold", vec![Waypoint { t: 0.0, pose: hold }, Waypoint { t: 0.05, pose: hold }]).unwrap();
    let ds = simulate(&resample(&traj, cfg.adc_rate_hz).unwrap(), &cfg).unwrap();
    let codes = ds.frames.last().unwrap().he_codes;
    let full = cfg.full_scale();
    let centre = cfg.centre_sensor();
    let outer_inside = codes.iter().enumerate().filter(|&(i, _)| i != centre).all(|(_, &c)| c > 0 && c < full);
    report(
        9,
        "saturation criterion",
        codes[centre] == full && outer_inside,
        format!("codes at {depth} mm = {codes:?}, centre {} (full scale {full}), outer strictly inside", codes[centre]),
    );
}

#[test]
fn c10_ir_noise_regime() {
    let exp = Experiment::default();
    let cfg = &exp.sim;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut variance = |d: f64| {
        let pose = Pose::new(cfg.ir_offset_mm[0], cfg.ir_offset_mm[1], cfg.h0_mm - d);
        let xs: Vec<f64> = (0..4000).map(|_| ir_counts(&pose, cfg, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let near = [10.0, 14.0, 18.0].map(&mut variance).into_iter().fold(0.0, f64::max);
    let far = [19.0, 24.0, 30.0].map(&mut variance).into_iter().fold(f64::INFINITY, f64::min);
    let ratio = far / near;

    let study: IrStudy = artifact("table1_ir.json");
    let row = &study.per_test[&1];
    let mut lines = Vec::new();
    let mut ordered = true;
    for m in IrMethod::ALL {
        let s = &row[&m];
        let near_rmse = s.near.expect("Test 1 reaches the near region").rmse;
        ordered &= s.full.rmse > near_rmse;
        lines.push(format!("{m} {:.3}/{near_rmse:.3}", s.full.rmse));
    }
    report(
        10,
        "IR noise regime",
        ratio >= 10.0 && ordered,
        format!("far/near count variance = {ratio:.1} (>= 10); Test 1 full/near RMSE: {} mm", lines.join(", ")),
    );
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().to_path_buf(), std::fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn c11_reproducibility() {
    let runs = runs();
    let (a, b) = (tree(&runs.first), tree(&runs.second));
    let differing: Vec<_> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let identical = a.len() == b.len() && differing.is_empty();
    let total = runs.elapsed[0] + runs.elapsed[1];
    report(
        11,
        "reproducibility",
        identical && total < TIME_BUDGET,
        format!(
            "{} files, identical: {identical} {differing:?}; reproduce-all took {:.0} s + {:.0} s (< {} s)",
            a.len(),
            runs.elapsed[0].as_secs_f64(),
            runs.elapsed[1].as_secs_f64(),
            TIME_BUDGET.as_secs()
        ),
    );
}
