use std::fmt;
use std::path::PathBuf;

use bladdersense_core::eval::EvalError;
use bladdersense_core::ircal::FitError;
use bladdersense_core::mlp::MlpError;
use bladdersense_core::sim::SimError;
use thiserror::Error;

/// A config problem tied to a field path such as `sim.gain`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn join(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("\n  {d}")).collect()
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read config {}: {source}", path.display())]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {origin}: {message}")]
    ConfigParse { origin: String, message: String },
    #[error("invalid --set {0:?}: {1}")]
    Set(String, String),
    #[error("invalid config:{}", join(.0))]
    ConfigInvalid(Vec<Diagnostic>),
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot load model {}: {source}", path.display())]
    Model { path: PathBuf, source: MlpError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::ConfigRead { .. }
            | CliError::ConfigParse { .. }
            | CliError::Set(..)
            | CliError::ConfigInvalid(_) => 3,
            CliError::Write { .. } | CliError::Model { .. } => 4,
            _ => 1,
        }
    }
}
