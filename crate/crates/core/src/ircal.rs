//! IR rangefinder calibration: the two-region piecewise regression, the
//! complementary blend of the same two lines, a logarithmic linearization and
//! the least-squares fits that produce their coefficients.
//!
//! All estimators map dimensionless rangefinder counts to a distance in mm
//! measured from the bladder base.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::LabeledDataset;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("inputs are constant; regression is undetermined")]
    Degenerate,
    #[error("distance {0} mm must be positive for a logarithmic fit")]
    NonPositiveDistance(f64),
    #[error("{0} region is empty")]
    EmptyRegion(&'static str),
    #[error("model file version {0:?} is not supported")]
    Version(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// `distance = slope * counts + intercept`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

impl Line {
    pub const fn new(slope: f64, intercept: f64) -> Self {
        Line { slope, intercept }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    pub fn inverse(&self, y: f64) -> f64 {
        (y - self.intercept) / self.slope
    }
}

/// Steep line fitted to the near (high-count) region.
pub const PRINTED_NEAR: Line = Line::new(-0.03049, 143.2);
/// Shallow line fitted to the far (low-count) region.
pub const PRINTED_FAR: Line = Line::new(-0.01226, 66.3);
pub const PRINTED_CROSSOVER: f64 = 4100.0;
pub const PRINTED_BLEND_LO: f64 = 4050.0;
pub const PRINTED_BLEND_HI: f64 = 4150.0;

/// Which line the piecewise model uses on each side of the crossover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Near line below the crossover, far line at and above it.
    AsPrinted,
    /// Near line at and above the crossover (high counts = short distance).
    ProseConsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseModel {
    pub near: Line,
    pub far: Line,
    pub crossover: f64,
    pub orientation: Orientation,
}

impl PiecewiseModel {
    pub fn printed(orientation: Orientation) -> Self {
        PiecewiseModel { near: PRINTED_NEAR, far: PRINTED_FAR, crossover: PRINTED_CROSSOVER, orientation }
    }

    pub fn estimate(&self, x: f64) -> f64 {
        let use_near = match self.orientation {
            Orientation::AsPrinted => x < self.crossover,
            Orientation::ProseConsistent => x >= self.crossover,
        };
        if use_near {
            self.near.eval(x)
        } else {
            self.far.eval(x)
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.near.slope < 0.0 && self.far.slope < 0.0) {
            return Err(FitError::Invalid("piecewise slopes must be negative".into()));
        }
        if !self.crossover.is_finite() {
            return Err(FitError::Invalid("piecewise crossover must be finite".into()));
        }
        Ok(())
    }
}

/// Blend of a near line `z1` and a far line `z2` weighted by a linear ramp
/// between `lo` and `hi` counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplementModel {
    pub z1: Line,
    pub z2: Line,
    pub lo: f64,
    pub hi: f64,
}

impl Default for ComplementModel {
    fn default() -> Self {
        ComplementModel::printed()
    }
}

impl ComplementModel {
    pub fn printed() -> Self {
        ComplementModel { z1: PRINTED_NEAR, z2: PRINTED_FAR, lo: PRINTED_BLEND_LO, hi: PRINTED_BLEND_HI }
    }

    /// Weight of the near line.
    pub fn alpha(&self, x: f64) -> f64 {
        if x < self.lo {
            0.0
        } else if x > self.hi {
            1.0
        } else {
            (x - self.lo) / (self.hi - self.lo)
        }
    }

    pub fn estimate(&self, x: f64) -> f64 {
        let a = self.alpha(x);
        a * self.z1.eval(x) + (1.0 - a) * self.z2.eval(x)
    }

    /// Counts whose estimate is `d`.
    ///
    /// The blend is not monotone inside `[lo, hi]`, so distances are mapped
    /// through the pure near line when it can reach them from `x >= hi`, and
    /// through the pure far line otherwise. Only if neither pure branch covers
    /// `d` is the blend region searched by bisection.
    pub fn inverse(&self, d: f64) -> f64 {
        let d_hi = self.z1.eval(self.hi);
        let d_lo = self.z2.eval(self.lo);
        if d <= d_hi {
            self.z1.inverse(d)
        } else if d >= d_lo {
            self.z2.inverse(d)
        } else {
            // d_hi < d < d_lo: the blend must bridge the gap
            let (mut a, mut b) = (self.lo, self.hi);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if self.estimate(m) > d {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.lo < self.hi) {
            return Err(FitError::Invalid("blend bounds need lo < hi".into()));
        }
        if !(self.z1.slope < 0.0 && self.z2.slope < 0.0) {
            return Err(FitError::Invalid("complement slopes must be negative".into()));
        }
        Ok(())
    }
}

/// `counts = a + b * ln(distance)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogModel {
    pub a: f64,
    pub b: f64,
}

impl LogModel {
    pub fn counts(&self, distance_mm: f64) -> f64 {
        self.a + self.b * distance_mm.ln()
    }

    /// Linearized reading: the distance this model assigns to `counts`.
    pub fn distance(&self, counts: f64) -> f64 {
        ((counts - self.a) / self.b).exp()
    }
}

/// One (reading, reference distance) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub counts: f64,
    pub distance_mm: f64,
}

/// Rangefinder distance for every frame: `h0 - z`.
pub fn samples_from_dataset(ds: &LabeledDataset) -> Vec<CalibrationSample> {
    let h0 = ds.manifest.config.h0_mm;
    ds.frames
        .iter()
        .zip(&ds.truth)
        .map(|(f, p)| CalibrationSample { counts: f.ir_counts, distance_mm: h0 - p.z })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub line: Line,
    pub residual_rmse: f64,
    pub n: usize,
}

/// Ordinary least squares of `ys` on `xs` using centred sums.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit, FitError> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(FitError::TooFewSamples { need: 2, got: n.min(ys.len()) });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if sxx <= (f64::EPSILON * scale).powi(2) * nf {
        return Err(FitError::Degenerate);
    }
    let slope = sxy / sxx;
    let line = Line::new(slope, my - slope * mx);
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (line.eval(*x) - y).powi(2)).sum();
    Ok(LineFit { line, residual_rmse: (sse / nf).sqrt(), n })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogFit {
    pub model: LogModel,
    pub residual_rmse: f64,
}

/// Regresses counts on `ln(distance)`.
pub fn fit_log(samples: &[CalibrationSample]) -> Result<LogFit, FitError> {
    if samples.len() < 2 {
        return Err(FitError::TooFewSamples { need: 2, got: samples.len() });
    }
    if let Some(bad) = samples.iter().find(|s| !(s.distance_mm > 0.0)) {
        return Err(FitError::NonPositiveDistance(bad.distance_mm));
    }
    let ln_d: Vec<f64> = samples.iter().map(|s| s.distance_mm.ln()).collect();
    let counts: Vec<f64> = samples.iter().map(|s| s.counts).collect();
    let fit = fit_line(&ln_d, &counts)?;
    Ok(LogFit {
        model: LogModel { a: fit.line.intercept, b: fit.line.slope },
        residual_rmse: fit.residual_rmse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseFit {
    pub model: PiecewiseModel,
    pub near_rmse: f64,
    pub far_rmse: f64,
    pub residual_rmse: f64,
}

/// Independent line fits on `distance <= crossover_mm` and `distance > crossover_mm`.
///
/// The count crossover is placed midway between the two lines' readings at
/// `crossover_mm`, and the result uses [`Orientation::ProseConsistent`].
pub fn fit_piecewise(samples: &[CalibrationSample], crossover_mm: f64) -> Result<PiecewiseFit, FitError> {
    let (near, far): (Vec<_>, Vec<_>) = samples.iter().partition(|s| s.distance_mm <= crossover_mm);
    let split = |set: &[&CalibrationSample]| -> (Vec<f64>, Vec<f64>) {
        set.iter().map(|s| (s.counts, s.distance_mm)).unzip()
    };
    if near.len() < 2 {
        return Err(FitError::EmptyRegion("near"));
    }
    if far.len() < 2 {
        return Err(FitError::EmptyRegion("far"));
    }
    let (nx, ny) = split(&near);
    let (fx, fy) = split(&far);
    let near_fit = fit_line(&nx, &ny)?;
    let far_fit = fit_line(&fx, &fy)?;
    let crossover = 0.5 * (near_fit.line.inverse(crossover_mm) + far_fit.line.inverse(crossover_mm));
    let total = (near_fit.n + far_fit.n) as f64;
    let residual_rmse = ((near_fit.residual_rmse.powi(2) * near_fit.n as f64
        + far_fit.residual_rmse.powi(2) * far_fit.n as f64)
        / total)
        .sqrt();
    Ok(PiecewiseFit {
        model: PiecewiseModel {
            near: near_fit.line,
            far: far_fit.line,
            crossover,
            orientation: Orientation::ProseConsistent,
        },
        near_rmse: near_fit.residual_rmse,
        far_rmse: far_fit.residual_rmse,
        residual_rmse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseCoefficients {
    pub near: Line,
    pub far: Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplementCoefficients {
    pub z1: Line,
    pub z2: Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogCoefficients {
    pub a: f64,
    pub b: f64,
}

/// On-disk form of a fitted rangefinder model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IrModel {
    Piecewise { coefficients: PiecewiseCoefficients, crossover: f64, orientation: Orientation },
    Complement { coefficients: ComplementCoefficients, blend_lo: f64, blend_hi: f64 },
    Log { coefficients: LogCoefficients },
}

impl From<PiecewiseModel> for IrModel {
    fn from(m: PiecewiseModel) -> Self {
        IrModel::Piecewise {
            coefficients: PiecewiseCoefficients { near: m.near, far: m.far },
            crossover: m.crossover,
            orientation: m.orientation,
        }
    }
}

impl From<ComplementModel> for IrModel {
    fn from(m: ComplementModel) -> Self {
        IrModel::Complement { coefficients: ComplementCoefficients { z1: m.z1, z2: m.z2 }, blend_lo: m.lo, blend_hi: m.hi }
    }
}

impl From<LogModel> for IrModel {
    fn from(m: LogModel) -> Self {
        IrModel::Log { coefficients: LogCoefficients { a: m.a, b: m.b } }
    }
}

impl IrModel {
    pub fn piecewise(&self) -> Option<PiecewiseModel> {
        match *self {
            IrModel::Piecewise { coefficients, crossover, orientation } => {
                Some(PiecewiseModel { near: coefficients.near, far: coefficients.far, crossover, orientation })
            }
            _ => None,
        }
    }

    pub fn complement(&self) -> Option<ComplementModel> {
        match *self {
            IrModel::Complement { coefficients, blend_lo, blend_hi } => {
                Some(ComplementModel { z1: coefficients.z1, z2: coefficients.z2, lo: blend_lo, hi: blend_hi })
            }
            _ => None,
        }
    }

    pub fn log(&self) -> Option<LogModel> {
        match *self {
            IrModel::Log { coefficients } => Some(LogModel { a: coefficients.a, b: coefficients.b }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrModelFile {
    pub version: String,
    #[serde(flatten)]
    pub model: IrModel,
    pub fit_residual_rmse: Option<f64>,
}

impl IrModelFile {
    pub fn new(model: impl Into<IrModel>, fit_residual_rmse: Option<f64>) -> Self {
        IrModelFile { version: crate::FORMAT_VERSION.to_string(), model: model.into(), fit_residual_rmse }
    }

    pub fn to_json(&self) -> Result<String, FitError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, FitError> {
        let file: IrModelFile = serde_json::from_str(text)?;
        if file.version != crate::FORMAT_VERSION {
            return Err(FitError::Version(file.version));
        }
        if let Some(p) = file.model.piecewise() {
            p.validate()?;
        }
        if let Some(c) = file.model.complement() {
            c.validate()?;
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), FitError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FitError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
