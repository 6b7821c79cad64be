use std::path::{Path, PathBuf};

use bladdersense_core::eval::Experiment;
use bladdersense_core::FORMAT_VERSION;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Diagnostic};

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_OUTPUT_DIR: &str = "out";

/// Complete description of a run. `output_dir` only says where artifacts
/// go, so it is never written back out and never affects artifact bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: String,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: FORMAT_VERSION.to_string(),
            seed: DEFAULT_SEED,
            output_dir: None,
            experiment: Experiment::default(),
        }
    }
}

impl RunConfig {
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

/// Reads a config (or the `config` member of a run manifest), applies
/// `--set` overrides and parses it. Also returns every diagnostic found;
/// an empty list means the config is usable.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<(RunConfig, Vec<Diagnostic>), CliError> {
    let (origin, mut raw) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::ConfigRead { path: p.to_path_buf(), source })?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::ConfigParse { origin: p.display().to_string(), message: e.to_string() })?;
            (p.display().to_string(), value)
        }
        None => ("<defaults>".to_string(), serde_json::to_value(RunConfig::default())?),
    };
    if let Some(config) = manifest_config(&raw) {
        raw = config;
    }
    for set in sets {
        apply_set(&mut raw, set)?;
    }
    // Parsed in two passes because flattened fields lose their error paths.
    let head: Head = parse(&raw, &origin)?;
    let experiment: Experiment = parse(&raw, &origin)?;
    let config = RunConfig { version: head.version, seed: head.seed, output_dir: head.output_dir, experiment };

    let mut diags = Vec::new();
    let canonical = serde_json::to_value(&config)?;
    unknown_keys(&raw, &canonical, "", &mut diags);
    if config.version != FORMAT_VERSION {
        diags.push(Diagnostic {
            path: "version".into(),
            message: format!("unsupported format version {:?} (expected {FORMAT_VERSION:?})", config.version),
        });
    }
    diags.extend(config.experiment.diagnostics().into_iter().map(|(path, message)| Diagnostic { path, message }));
    Ok((config, diags))
}

/// Top-level fields of [`RunConfig`] outside the experiment.
#[derive(Deserialize)]
#[serde(default)]
struct Head {
    version: String,
    seed: u64,
    output_dir: Option<PathBuf>,
}

impl Default for Head {
    fn default() -> Self {
        let d = RunConfig::default();
        Head { version: d.version, seed: d.seed, output_dir: d.output_dir }
    }
}

fn parse<T: serde::de::DeserializeOwned>(raw: &Value, origin: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(raw).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        CliError::ConfigParse {
            origin: origin.to_string(),
            message: if path == "." { message } else { format!("{path}: {message}") },
        }
    })
}

/// The embedded config when `raw` is a run manifest.
fn manifest_config(raw: &Value) -> Option<Value> {
    let obj = raw.as_object()?;
    if obj.contains_key("artifacts") {
        obj.get("config").cloned()
    } else {
        None
    }
}

/// Applies `a.b.0.c=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise; missing object keys are created.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let err = |msg: &str| CliError::Set(assignment.to_string(), msg.to_string());
    let (key, text) = assignment.split_once('=').ok_or_else(|| err("expected KEY=VALUE"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(err("empty key segment"));
    }
    let value = serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()));
    let mut node = root;
    for seg in key.split('.') {
        node = match node {
            Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| err(&format!("{seg:?} is not an array index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| err(&format!("index {idx} out of range (length {len})")))?
            }
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set").entry(seg.to_string()).or_insert(Value::Null)
            }
            _ => return Err(err(&format!("cannot descend into {seg:?}"))),
        };
    }
    *node = value;
    Ok(())
}

/// Keys present in `raw` that the parsed config does not carry.
fn unknown_keys(raw: &Value, canonical: &Value, prefix: &str, out: &mut Vec<Diagnostic>) {
    let child = |key: &str| if prefix.is_empty() { key.to_string() } else { format!("{prefix}.{key}") };
    match (raw, canonical) {
        (Value::Object(r), Value::Object(c)) => {
            for (key, value) in r {
                match c.get(key) {
                    Some(cv) => unknown_keys(value, cv, &child(key), out),
                    // output_dir is accepted but never serialized
                    None if prefix.is_empty() && key == "output_dir" => {}
                    None => out.push(Diagnostic { path: child(key), message: "unknown field".into() }),
                }
            }
        }
        (Value::Array(r), Value::Array(c)) => {
            for (i, (rv, cv)) in r.iter().zip(c).enumerate() {
                unknown_keys(rv, cv, &child(&i.to_string()), out);
            }
        }
        _ => {}
    }
}
