//! Runtime estimators: the HE network followed by a moving-average output
//! filter, and the selectable IR rangefinder estimators.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ircal::{ComplementModel, PiecewiseModel};
use crate::mlp::{MlpError, MlpModel};
use crate::sim::{SensorFrame, N_HALL};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("sample width changed from {expected} to {got}")]
    WidthChange { expected: usize, got: usize },
    #[error("model is {n_in}->{n_out}, expected {want_in}->{want_out}")]
    Shape { n_in: usize, n_out: usize, want_in: usize, want_out: usize },
    #[error("no {0} model loaded")]
    MissingModel(IrMethod),
    #[error("unknown IR method {0:?} (expected piecewise, complement or nn)")]
    UnknownMethod(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("estimate csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-channel mean over the last `buffer_len` samples; `0` passes input through.
/// Before the window fills, averages the samples received so far.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    buffer_len: usize,
    width: Option<usize>,
    window: VecDeque<Vec<f64>>,
}

impl MovingAverage {
    pub fn new(buffer_len: usize) -> Self {
        MovingAverage { buffer_len, width: None, window: VecDeque::with_capacity(buffer_len) }
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer_len
    }

    pub fn reset(&mut self) {
        self.width = None;
        self.window.clear();
    }

    pub fn push(&mut self, sample: &[f64]) -> Result<Vec<f64>, PipelineError> {
        match self.width {
            Some(w) if w != sample.len() => {
                return Err(PipelineError::WidthChange { expected: w, got: sample.len() })
            }
            _ => self.width = Some(sample.len()),
        }
        if self.buffer_len == 0 {
            return Ok(sample.to_vec());
        }
        if self.window.len() == self.buffer_len {
            self.window.pop_front();
        }
        self.window.push_back(sample.to_vec());
        let n = self.window.len() as f64;
        Ok((0..sample.len()).map(|c| self.window.iter().map(|s| s[c]).sum::<f64>() / n).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub t: f64,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: f64,
    pub source: String,
}

pub fn write_estimates_csv<W: Write>(estimates: &[Estimate], writer: W) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t_s", "x_mm", "y_mm", "z_mm", "method"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for e in estimates {
        w.write_record([e.t.to_string(), opt(e.x), opt(e.y), e.z.to_string(), e.source.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// HE network inference followed by the moving-average filter.
#[derive(Debug, Clone)]
pub struct HePipeline {
    model: MlpModel,
    filter: MovingAverage,
}

impl HePipeline {
    pub const SOURCE: &'static str = "he-nn";

    pub fn new(model: MlpModel, buffer_len: usize) -> Result<Self, PipelineError> {
        if model.n_in != N_HALL || model.n_out != 3 {
            return Err(PipelineError::Shape { n_in: model.n_in, n_out: model.n_out, want_in: N_HALL, want_out: 3 });
        }
        Ok(HePipeline { model, filter: MovingAverage::new(buffer_len) })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn reset(&mut self) {
        self.filter.reset();
    }

    pub fn estimate(&mut self, frame: &SensorFrame) -> Result<Estimate, PipelineError> {
        let codes = frame.he_codes.map(f64::from);
        let raw = self.model.forward(&codes)?;
        let f = self.filter.push(&raw)?;
        Ok(Estimate { t: frame.t, x: Some(f[0]), y: Some(f[1]), z: f[2], source: Self::SOURCE.into() })
    }

    /// Filtered `(x, y, z)` for a whole stream, starting from an empty filter.
    pub fn run(&mut self, frames: &[SensorFrame]) -> Result<Vec<[f64; 3]>, PipelineError> {
        self.reset();
        let mut ws = self.model.workspace();
        let mut raw = [0.0; 3];
        let mut out = Vec::with_capacity(frames.len());
        for frame in frames {
            self.model.forward_into(&frame.he_codes.map(f64::from), &mut ws, &mut raw)?;
            let f = self.filter.push(&raw)?;
            out.push([f[0], f[1], f[2]]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IrMethod {
    Piecewise,
    Complement,
    Nn,
}

impl IrMethod {
    pub const ALL: [IrMethod; 3] = [IrMethod::Piecewise, IrMethod::Complement, IrMethod::Nn];

    pub fn as_str(self) -> &'static str {
        match self {
            IrMethod::Piecewise => "piecewise",
            IrMethod::Complement => "complement",
            IrMethod::Nn => "nn",
        }
    }
}

impl fmt::Display for IrMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IrMethod {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IrMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PipelineError::UnknownMethod(s.to_string()))
    }
}

/// Rangefinder estimators available to [`ir_estimate`]. The network maps
/// counts to distance in mm.
#[derive(Debug, Clone, Default)]
pub struct IrModels {
    pub piecewise: Option<PiecewiseModel>,
    pub complement: Option<ComplementModel>,
    pub nn: Option<MlpModel>,
}

impl IrModels {
    /// Distance in mm from raw counts.
    pub fn distance(&self, counts: f64, method: IrMethod) -> Result<f64, PipelineError> {
        let missing = || PipelineError::MissingModel(method);
        match method {
            IrMethod::Piecewise => Ok(self.piecewise.as_ref().ok_or_else(missing)?.estimate(counts)),
            IrMethod::Complement => Ok(self.complement.as_ref().ok_or_else(missing)?.estimate(counts)),
            IrMethod::Nn => {
                let nn = self.nn.as_ref().ok_or_else(missing)?;
                if nn.n_in != 1 || nn.n_out != 1 {
                    return Err(PipelineError::Shape { n_in: nn.n_in, n_out: nn.n_out, want_in: 1, want_out: 1 });
                }
                Ok(nn.forward(&[counts])?[0])
            }
        }
    }
}

/// Compression estimate `z = h0 - d` from one rangefinder reading.
pub fn ir_estimate(t: f64, counts: f64, method: IrMethod, models: &IrModels, h0_mm: f64) -> Result<Estimate, PipelineError> {
    let d = models.distance(counts, method)?;
    Ok(Estimate { t, x: None, y: None, z: h0_mm - d, source: format!("ir-{method}") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ircal::Orientation;
    use crate::mlp::Normalizer;
    use proptest::prelude::*;

    fn printed_models() -> IrModels {
        IrModels {
            piecewise: Some(PiecewiseModel::printed(Orientation::AsPrinted)),
            complement: Some(ComplementModel::printed()),
            nn: None,
        }
    }

    #[test]
    fn moving_average_warm_up() {
        let mut f = MovingAverage::new(3);
        let out: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| f.push(&[v]).unwrap()[0]).collect();
        assert_eq!(out, vec![1.0, 1.5, 2.0, 3.0]);
    }

    #[test]
    fn zero_buffer_is_identity() {
        let mut f = MovingAverage::new(0);
        for v in [3.0, -1.0, 7.5] {
            assert_eq!(f.push(&[v, 2.0 * v]).unwrap(), vec![v, 2.0 * v]);
        }
    }

    #[test]
    fn width_change_is_rejected() {
        let mut f = MovingAverage::new(4);
        f.push(&[1.0, 2.0]).unwrap();
        assert!(matches!(f.push(&[1.0]), Err(PipelineError::WidthChange { expected: 2, got: 1 })));
    }

    #[test]
    fn group_delay_on_ramp() {
        for n in [10usize, 20, 30, 40] {
            let mut f = MovingAverage::new(n);
            let input: Vec<f64> = (0..400).map(|i| i as f64).collect();
            let out: Vec<f64> = input.iter().map(|&v| f.push(&[v]).unwrap()[0]).collect();
            // cross-correlation peak of the differenced signals over integer and half-sample lags
            let best = (0..=2 * n)
                .map(|k| k as f64 * 0.5)
                .min_by(|&a, &b| {
                    let cost = |lag: f64| {
                        (n..400).map(|i| (out[i] - (input[i] - lag)).powi(2)).sum::<f64>()
                    };
                    cost(a).total_cmp(&cost(b))
                })
                .unwrap();
            let expected = (n as f64 - 1.0) / 2.0;
            assert!((best - expected).abs() <= 0.5, "n {n} delay {best}");
        }
    }

    #[test]
    fn constant_frames_settle_after_window_fills() {
        let mut m = MlpModel::init(5, 4, 3, 1).unwrap();
        m.in_norm = Normalizer { min: vec![0.0; 5], max: vec![1023.0; 5] };
        let mut p = HePipeline::new(m, 20).unwrap();
        let frame = |c: u16| SensorFrame { t: 0.0, he_codes: [c; 5], ir_counts: 0.0 };
        for _ in 0..30 {
            p.estimate(&frame(100)).unwrap();
        }
        let target = p.model().forward(&[700.0; 5]).unwrap();
        let mut last = None;
        for i in 1..=20 {
            let e = p.estimate(&frame(700)).unwrap();
            if i < 20 {
                assert_ne!(e.z, target[2]);
            }
            last = Some(e);
        }
        let e = last.unwrap();
        assert!((e.z - target[2]).abs() < 1e-12);
        assert!((e.x.unwrap() - target[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_model_gives_origin() {
        let mut m = MlpModel::init(5, 6, 3, 2).unwrap();
        m.set_params(&vec![0.0; m.n_params()]);
        m.out_norm = Normalizer { min: vec![-6.0, -6.0, -10.0], max: vec![6.0, 6.0, 10.0] };
        let mut p = HePipeline::new(m, 10).unwrap();
        for c in [0u16, 300, 1023] {
            let e = p.estimate(&SensorFrame { t: 0.5, he_codes: [c; 5], ir_counts: 0.0 }).unwrap();
            assert_eq!((e.x, e.y, e.z), (Some(0.0), Some(0.0), 0.0));
        }
        assert!(matches!(
            HePipeline::new(MlpModel::init(1, 2, 1, 0).unwrap(), 0),
            Err(PipelineError::Shape { .. })
        ));
    }

    #[test]
    fn ir_estimate_examples() {
        let m = printed_models();
        let c = ir_estimate(0.0, 4200.0, IrMethod::Complement, &m, 30.0).unwrap();
        assert!((c.z - 14.858).abs() < 1e-9);
        let p = ir_estimate(0.0, 4000.0, IrMethod::Piecewise, &m, 30.0).unwrap();
        assert!((p.z - 8.76).abs() < 1e-9);
        assert!(matches!(
            ir_estimate(0.0, 4000.0, IrMethod::Nn, &m, 30.0),
            Err(PipelineError::MissingModel(IrMethod::Nn))
        ));
        let mut nn = MlpModel::init(1, 3, 1, 0).unwrap();
        nn.set_params(&vec![0.0; nn.n_params()]);
        nn.out_norm = Normalizer { min: vec![10.0], max: vec![20.0] };
        let with_nn = IrModels { nn: Some(nn), ..m };
        for counts in [3000.0, 4100.0, 4500.0] {
            assert_eq!(ir_estimate(0.0, counts, IrMethod::Nn, &with_nn, 30.0).unwrap().z, 15.0);
        }
    }

    #[test]
    fn piecewise_has_one_discontinuity_complement_none() {
        let m = printed_models();
        let mut jumps = 0;
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=400_000 {
            let x = 3900.0 + k as f64 * 1e-3;
            let pw = ir_estimate(0.0, x, IrMethod::Piecewise, &m, 30.0).unwrap().z;
            let cm = ir_estimate(0.0, x, IrMethod::Complement, &m, 30.0).unwrap().z;
            if let Some((p0, c0)) = prev {
                if (pw - p0) > 1e-3 {
                    jumps += 1;
                }
                assert!((cm - c0).abs() < 1e-3);
            }
            prev = Some((pw, cm));
        }
        assert_eq!(jumps, 1);
    }

    #[test]
    fn method_names_round_trip() {
        for m in IrMethod::ALL {
            assert_eq!(m.as_str().parse::<IrMethod>().unwrap(), m);
        }
        assert!("kalman".parse::<IrMethod>().is_err());
    }

    #[test]
    fn estimate_csv_layout() {
        let es = vec![
            Estimate { t: 0.0, x: Some(1.0), y: Some(-2.0), z: 3.5, source: "he-nn".into() },
            Estimate { t: 0.5, x: None, y: None, z: 4.0, source: "ir-complement".into() },
        ];
        let mut buf = Vec::new();
        write_estimates_csv(&es, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t_s,x_mm,y_mm,z_mm,method\n0,1,-2,3.5,he-nn\n0.5,,,4,ir-complement\n");
    }

    proptest! {
        #[test]
        fn full_window_mean_is_permutation_invariant(mut xs in proptest::collection::vec(-100.0f64..100.0, 8), seed in 0u64..1000) {
            let mean_of = |v: &[f64]| {
                let mut f = MovingAverage::new(8);
                v.iter().map(|&x| f.push(&[x]).unwrap()[0]).last().unwrap()
            };
            let a = mean_of(&xs);
            let mut rng = crate::seed::rng(seed);
            rand::seq::SliceRandom::shuffle(xs.as_mut_slice(), &mut rng);
            prop_assert!((a - mean_of(&xs)).abs() < 1e-12);
        }

        #[test]
        fn constant_input_passes_through(c in -1e3f64..1e3, n in 0usize..50, pushes in 1usize..100) {
            let mut f = MovingAverage::new(n);
            for _ in 0..pushes {
                prop_assert!((f.push(&[c]).unwrap()[0] - c).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }
    }
}
