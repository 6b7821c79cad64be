//! Sensor simulator: point-dipole magnet over a plus-shaped array of five
//! single-axis Hall sensors, their amplifier/low-pass/ADC chain, and an IR
//! rangefinder with distance-dependent noise and lateral occlusion.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ircal::ComplementModel;
use crate::trajgen::{Pose, TimedPoseSeries};

/// mu0 / 4pi in T*m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;
pub const N_HALL: usize = 5;
/// Margin below the upper rail that counts as saturated.
pub const SATURATION_EPS_V: f64 = 1e-3;
/// Outer sensors must stay below this fraction of the upper rail.
pub const OUTER_HEADROOM: f64 = 0.95;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("field point coincides with the magnet")]
    Singular,
    #[error("series rate {series} Hz does not match the ADC rate {adc} Hz")]
    RateMismatch { series: f64, adc: f64 },
    #[error("pose series is empty")]
    EmptySeries,
    #[error("no magnet moment up to {max} A*m^2 saturates only the centre sensor at depth {depth} mm")]
    Infeasible { depth: f64, max: f64 },
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("dataset version {0:?} is not supported")]
    Version(String),
    #[error("dataset csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrNoise {
    /// Count noise at distances up to the threshold.
    pub sigma_near: f64,
    pub sigma_far: f64,
    pub near_far_threshold_mm: f64,
}

impl Default for IrNoise {
    fn default() -> Self {
        IrNoise { sigma_near: 10.0, sigma_far: 300.0, near_far_threshold_mm: 18.0 }
    }
}

/// Apparent distance of a corrupted reading as a fraction of the true one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptDistribution {
    pub min_fraction: f64,
    pub max_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub lat_threshold_mm: f64,
    /// Excess lateral displacement over which the corruption probability ramps to `max_prob`.
    pub prob_ramp_mm: f64,
    pub max_prob: f64,
    pub corrupt: CorruptDistribution,
}

impl Default for Occlusion {
    fn default() -> Self {
        Occlusion {
            lat_threshold_mm: 6.0,
            prob_ramp_mm: 6.0,
            max_prob: 0.5,
            corrupt: CorruptDistribution { min_fraction: 0.3, max_fraction: 0.9 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Sensor (x, y) in mm on the base plane; index 0 is the centre sensor.
    pub sensor_positions: [[f64; 2]; N_HALL],
    pub sensor_axis: [f64; 3],
    /// Magnet height above the sensor plane with the bladder uncompressed.
    pub h0_mm: f64,
    pub moment_am2: f64,
    /// Largest moment a magnet that fits the bladder top can carry.
    pub moment_max_am2: f64,
    /// Sensor output per tesla along its axis.
    pub sensitivity_v_per_t: f64,
    pub bias_v: f64,
    pub gain: f64,
    pub lp_cutoff_hz: f64,
    pub adc_bits: u32,
    pub adc_rate_hz: f64,
    pub rails: [f64; 2],
    /// Gaussian noise at the sensor output, before gain and filtering.
    pub he_noise_sigma_v: f64,
    pub ir_model: ComplementModel,
    pub ir_noise: IrNoise,
    /// Rangefinder (x, y) relative to the bladder centre.
    pub ir_offset_mm: [f64; 2],
    pub occlusion: Occlusion,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let s = 6.0;
        SimConfig {
            sensor_positions: [[0.0, 0.0], [s, 0.0], [-s, 0.0], [0.0, s], [0.0, -s]],
            sensor_axis: [0.0, 0.0, 1.0],
            h0_mm: 30.0,
            moment_am2: 0.05,
            moment_max_am2: 0.25,
            // 2.5 mV/G
            sensitivity_v_per_t: 25.0,
            bias_v: 2.5,
            gain: 22.0,
            lp_cutoff_hz: 100.0,
            adc_bits: 10,
            adc_rate_hz: 2000.0,
            rails: [0.0, 5.0],
            he_noise_sigma_v: 5e-4,
            ir_model: ComplementModel::printed(),
            ir_noise: IrNoise::default(),
            ir_offset_mm: [-5.0, 0.0],
            occlusion: Occlusion::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Field-path diagnostics for every violated invariant.
    pub fn diagnostics(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut bad = |path: &str, msg: &str| out.push((path.to_string(), msg.to_string()));
        if !(self.gain > 0.0) {
            bad("gain", "must be > 0");
        }
        if self.adc_bits < 1 || self.adc_bits > 24 {
            bad("adc_bits", "must be in 1..=24");
        }
        if !(self.rails[0] < self.rails[1]) {
            bad("rails", "lower rail must be below upper rail");
        }
        if !(self.ir_model.lo < self.ir_model.hi) {
            bad("ir_model.lo", "blend_lo must be below blend_hi");
        }
        if !(self.ir_model.z1.slope < 0.0 && self.ir_model.z2.slope < 0.0) {
            bad("ir_model", "line slopes must be negative");
        }
        for i in 0..N_HALL {
            for j in i + 1..N_HALL {
                if self.sensor_positions[i] == self.sensor_positions[j] {
                    bad("sensor_positions", "sensor positions must be distinct");
                }
            }
        }
        let axis_norm = Vector3::from(self.sensor_axis).norm();
        if (axis_norm - 1.0).abs() > 1e-9 {
            bad("sensor_axis", "must be a unit vector");
        }
        if !(self.h0_mm > 0.0) {
            bad("h0_mm", "must be > 0");
        }
        if !(self.adc_rate_hz > 0.0) {
            bad("adc_rate_hz", "must be > 0");
        }
        if !(self.lp_cutoff_hz > 0.0) {
            bad("lp_cutoff_hz", "must be > 0");
        }
        if !(self.moment_am2 >= 0.0) {
            bad("moment_am2", "must be >= 0");
        }
        if !(self.he_noise_sigma_v >= 0.0) {
            bad("he_noise_sigma_v", "must be >= 0");
        }
        if !(self.ir_noise.sigma_near >= 0.0 && self.ir_noise.sigma_far >= 0.0) {
            bad("ir_noise", "sigmas must be >= 0");
        }
        let c = self.occlusion.corrupt;
        if !(0.0 < c.min_fraction && c.min_fraction <= c.max_fraction && c.max_fraction <= 1.0) {
            bad("occlusion.corrupt", "fractions must satisfy 0 < min <= max <= 1");
        }
        if !(0.0..=1.0).contains(&self.occlusion.max_prob) {
            bad("occlusion.max_prob", "must be in [0, 1]");
        }
        if !(self.occlusion.prob_ramp_mm > 0.0) {
            bad("occlusion.prob_ramp_mm", "must be > 0");
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self.diagnostics().first() {
            None => Ok(()),
            Some((path, msg)) => Err(SimError::Config(format!("{path}: {msg}"))),
        }
    }

    pub fn full_scale(&self) -> u16 {
        ((1u32 << self.adc_bits) - 1) as u16
    }

    pub fn noise_free(&self) -> Self {
        let mut cfg = self.clone();
        cfg.he_noise_sigma_v = 0.0;
        cfg.ir_noise.sigma_near = 0.0;
        cfg.ir_noise.sigma_far = 0.0;
        cfg.occlusion.max_prob = 0.0;
        cfg
    }

    fn sensor_point(&self, i: usize) -> Vector3<f64> {
        let [x, y] = self.sensor_positions[i];
        Vector3::new(x, y, 0.0)
    }

    /// Index of the sensor closest to the bladder axis.
    pub fn centre_sensor(&self) -> usize {
        (0..N_HALL)
            .min_by(|&a, &b| {
                let ra = f64::hypot(self.sensor_positions[a][0], self.sensor_positions[a][1]);
                let rb = f64::hypot(self.sensor_positions[b][0], self.sensor_positions[b][1]);
                ra.total_cmp(&rb)
            })
            .unwrap_or(0)
    }
}

/// Magnet position (mm) and moment vector (A*m^2) for a pose.
pub fn magnet_state(pose: &Pose, cfg: &SimConfig) -> (Vector3<f64>, Vector3<f64>) {
    let position = Vector3::new(pose.x, pose.y, cfg.h0_mm - pose.z);
    let tilt = pose.tilt_y.to_radians();
    // +z rotated about +y
    let moment = cfg.moment_am2 * Vector3::new(tilt.sin(), 0.0, tilt.cos());
    (position, moment)
}

/// Point-dipole flux density in tesla at `point` (mm) from a dipole at
/// `magnet` (mm) with `moment` (A*m^2).
pub fn dipole_field(magnet: &Vector3<f64>, moment: &Vector3<f64>, point: &Vector3<f64>) -> Result<Vector3<f64>, SimError> {
    let r = (point - magnet) * 1e-3;
    let d = r.norm();
    if d == 0.0 {
        return Err(SimError::Singular);
    }
    let r_hat = r / d;
    Ok((3.0 * moment.dot(&r_hat) * r_hat - moment) * (MU0_OVER_4PI / (d * d * d)))
}

/// Field component along each sensor's axis.
pub fn sensor_fields(pose: &Pose, cfg: &SimConfig) -> Result<[f64; N_HALL], SimError> {
    let (pos, moment) = magnet_state(pose, cfg);
    let axis = Vector3::from(cfg.sensor_axis);
    let mut out = [0.0; N_HALL];
    for (i, b) in out.iter_mut().enumerate() {
        *b = dipole_field(&pos, &moment, &cfg.sensor_point(i))?.dot(&axis);
    }
    Ok(out)
}

/// Amplifier output before the low-pass: sensor output (bias + signal +
/// noise) clamped to the rails, bias removed, gained, clamped again.
pub fn conditioned_voltage(b_axis: f64, noise_v: f64, cfg: &SimConfig) -> f64 {
    let [lo, hi] = cfg.rails;
    let v_raw = (cfg.bias_v + cfg.sensitivity_v_per_t * b_axis + noise_v).clamp(lo, hi);
    (cfg.gain * (v_raw - cfg.bias_v)).clamp(lo, hi)
}

/// First-order discrete low-pass, seeded with its first input.
#[derive(Debug, Clone)]
pub struct LowPass {
    alpha: f64,
    state: Option<f64>,
}

impl LowPass {
    pub fn new(cutoff_hz: f64, rate_hz: f64) -> Self {
        let dt = 1.0 / rate_hz;
        let rc = 1.0 / (2.0 * PI * cutoff_hz);
        LowPass { alpha: dt / (dt + rc), state: None }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn step(&mut self, v: f64) -> f64 {
        let next = match self.state {
            None => v,
            Some(s) => s + self.alpha * (v - s),
        };
        self.state = Some(next);
        next
    }
}

/// One sample through the conditioning chain: gain stage then low-pass.
pub fn analog_chain(b_axis: f64, noise_v: f64, cfg: &SimConfig, lp: &mut LowPass) -> f64 {
    lp.step(conditioned_voltage(b_axis, noise_v, cfg))
}

/// Round-half-up quantization against `rails[1]` full scale.
pub fn adc(volts: f64, cfg: &SimConfig) -> u16 {
    let full = cfg.full_scale() as f64;
    let code = (volts / cfg.rails[1] * full + 0.5).floor();
    code.clamp(0.0, full) as u16
}

/// Noise-free rangefinder reading at distance `d_mm`.
pub fn nominal_ir_counts(d_mm: f64, cfg: &SimConfig) -> f64 {
    cfg.ir_model.inverse(d_mm)
}

/// Probability that a reading at this pose is replaced by a wall reflection.
pub fn occlusion_probability(pose: &Pose, cfg: &SimConfig) -> f64 {
    let occ = &cfg.occlusion;
    let lat = f64::hypot(pose.x - cfg.ir_offset_mm[0], pose.y - cfg.ir_offset_mm[1]);
    occ.max_prob * ((lat - occ.lat_threshold_mm) / occ.prob_ramp_mm).clamp(0.0, 1.0)
}

fn ir_sigma(d_mm: f64, cfg: &SimConfig) -> f64 {
    if d_mm <= cfg.ir_noise.near_far_threshold_mm {
        cfg.ir_noise.sigma_near
    } else {
        cfg.ir_noise.sigma_far
    }
}

/// Rangefinder counts with noise and occlusion. Always consumes three draws
/// from `rng` so streams stay aligned.
pub fn ir_counts(pose: &Pose, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> f64 {
    let noise: f64 = rng.sample(StandardNormal);
    let u_occ: f64 = rng.random();
    let u_frac: f64 = rng.random();
    let d = cfg.h0_mm - pose.z;
    let apparent = if u_occ < occlusion_probability(pose, cfg) {
        let c = cfg.occlusion.corrupt;
        d * (c.min_fraction + u_frac * (c.max_fraction - c.min_fraction))
    } else {
        d
    };
    nominal_ir_counts(apparent, cfg) + ir_sigma(apparent, cfg) * noise
}

/// Smallest moment that pins the centre sensor at the upper rail at
/// `(0, 0, max_depth)` while every outer sensor stays inside
/// `[SATURATION_EPS_V, OUTER_HEADROOM * rails[1]]`.
pub fn calibrate_moment(cfg: &SimConfig, max_depth: f64) -> Result<f64, SimError> {
    if !(0.0..cfg.h0_mm).contains(&max_depth) {
        return Err(SimError::Config(format!("max_depth {max_depth} mm outside [0, h0)")));
    }
    let pose = Pose::new(0.0, 0.0, max_depth);
    let centre = cfg.centre_sensor();
    let top = cfg.rails[1];
    let volts_at = |m: f64| -> Result<[f64; N_HALL], SimError> {
        let probe = SimConfig { moment_am2: m, ..cfg.clone() };
        Ok(sensor_fields(&pose, &probe)?.map(|b| conditioned_voltage(b, 0.0, &probe)))
    };
    let saturated = |m: f64| -> Result<bool, SimError> { Ok(volts_at(m)?[centre] >= top - SATURATION_EPS_V) };
    let infeasible = SimError::Infeasible { depth: max_depth, max: cfg.moment_max_am2 };
    if !saturated(cfg.moment_max_am2)? {
        return Err(infeasible);
    }
    let (mut lo, mut hi) = (0.0, cfg.moment_max_am2);
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if saturated(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let v = volts_at(hi)?;
    let outer_ok = (0..N_HALL)
        .filter(|&i| i != centre)
        .all(|i| v[i] >= SATURATION_EPS_V && v[i] <= OUTER_HEADROOM * top);
    if outer_ok {
        Ok(hi)
    } else {
        Err(infeasible)
    }
}

/// One ADC sample of all channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: f64,
    pub he_codes: [u16; N_HALL],
    pub ir_counts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub label: String,
    pub seed: u64,
    pub config: SimConfig,
}

/// Frames aligned one-to-one with their ground-truth poses.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub frames: Vec<SensorFrame>,
    pub truth: Vec<Pose>,
    pub manifest: DatasetManifest,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Appends `other`'s samples; the manifest keeps this dataset's config.
    pub fn extend(&mut self, other: &LabeledDataset) {
        self.frames.extend_from_slice(&other.frames);
        self.truth.extend_from_slice(&other.truth);
        self.manifest.label = format!("{}+{}", self.manifest.label, other.manifest.label);
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "t_s", "x_mm", "y_mm", "z_mm", "tilt_y_deg", "he0", "he1", "he2", "he3", "he4", "ir_counts",
        ])?;
        for (f, p) in self.frames.iter().zip(&self.truth) {
            let mut rec = vec![f.t.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string(), p.tilt_y.to_string()];
            rec.extend(f.he_codes.iter().map(|c| c.to_string()));
            rec.push(f.ir_counts.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, manifest: DatasetManifest) -> Result<Self, SimError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut frames = Vec::new();
        let mut truth = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = frames.len() + 1;
            let num = |i: usize| -> Result<f64, SimError> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| SimError::Config(format!("bad dataset field {i} in row {row}")))
            };
            let mut codes = [0u16; N_HALL];
            for (k, c) in codes.iter_mut().enumerate() {
                *c = num(5 + k)? as u16;
            }
            frames.push(SensorFrame { t: num(0)?, he_codes: codes, ir_counts: num(10)? });
            truth.push(Pose { x: num(1)?, y: num(2)?, z: num(3)?, tilt_y: num(4)? });
        }
        Ok(LabeledDataset { frames, truth, manifest })
    }

    /// Writes `<stem>.csv` plus the `<stem>.json` manifest.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), SimError> {
        let file = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, SimError> {
        let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        if manifest.version != crate::FORMAT_VERSION {
            return Err(SimError::Version(manifest.version));
        }
        let file = std::fs::File::open(dir.join(format!("{stem}.csv")))?;
        Self::read_csv(std::io::BufReader::new(file), manifest)
    }
}

/// Runs a dense pose series through the full sensing chain.
pub fn simulate(series: &TimedPoseSeries, cfg: &SimConfig) -> Result<LabeledDataset, SimError> {
    if series.poses.is_empty() {
        return Err(SimError::EmptySeries);
    }
    if (series.rate_hz - cfg.adc_rate_hz).abs() > 1e-9 * cfg.adc_rate_hz {
        return Err(SimError::RateMismatch { series: series.rate_hz, adc: cfg.adc_rate_hz });
    }
    cfg.validate()?;
    let mut rng = crate::seed::rng(cfg.seed);
    let mut filters: Vec<LowPass> = (0..N_HALL).map(|_| LowPass::new(cfg.lp_cutoff_hz, cfg.adc_rate_hz)).collect();
    let mut frames = Vec::with_capacity(series.poses.len());
    for (i, pose) in series.poses.iter().enumerate() {
        let fields = sensor_fields(pose, cfg)?;
        let mut codes = [0u16; N_HALL];
        for k in 0..N_HALL {
            let n: f64 = rng.sample(StandardNormal);
            let v = analog_chain(fields[k], cfg.he_noise_sigma_v * n, cfg, &mut filters[k]);
            codes[k] = adc(v, cfg);
        }
        let ir = ir_counts(pose, cfg, &mut rng);
        frames.push(SensorFrame { t: series.time(i), he_codes: codes, ir_counts: ir });
    }
    Ok(LabeledDataset {
        frames,
        truth: series.poses.clone(),
        manifest: DatasetManifest {
            version: crate::FORMAT_VERSION.to_string(),
            label: series.label.clone(),
            seed: cfg.seed,
            config: cfg.clone(),
        },
    })
}
