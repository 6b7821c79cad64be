//! Compression sensing workbench for a soft pneumatic bladder.
//!
//! The crate simulates a five-sensor Hall-effect array under a moving magnet
//! together with an IR rangefinder, provides the rangefinder calibration
//! estimators, a small Levenberg–Marquardt trained feed-forward network, the
//! runtime estimation pipelines and the evaluation studies built on them.
//!
//! Modules are layered bottom-up:
//!
//! - [`trajgen`]: ground-truth poses and timed trajectories.
//! - [`sim`]: dipole field, analog chain, ADC and IR count models.
//! - [`ircal`]: rangefinder regressions and their least-squares fits.
//! - [`mlp`]: two-layer network, Jacobian and LM / Bayesian-regularized training.
//! - [`pipeline`]: streaming HE and IR estimators with moving-average output filtering.
//! - [`eval`]: error statistics, test evaluation and the study runners.

// `!(a < b)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod ircal;
pub mod mlp;
pub mod pipeline;
pub mod seed;
pub mod sim;
pub mod trajgen;

/// Version string written into every file format produced by this crate.
pub const FORMAT_VERSION: &str = "1";
