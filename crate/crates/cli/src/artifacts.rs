use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bladdersense_core::seed::digest_hex;
use bladdersense_core::FORMAT_VERSION;
use serde::{Deserialize, Serialize};

use crate::commands::Command;
use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Written next to every set of artifacts. Holds everything needed to
/// regenerate them: pass it back with `--config` and the same command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub tool: String,
    pub tool_version: String,
    pub command: Command,
    pub seed: u64,
    pub config_digest: String,
    pub config: RunConfig,
    pub artifacts: Vec<Artifact>,
}

/// Output directory that records the digest of everything written to it.
pub struct OutputDir {
    root: PathBuf,
    written: BTreeMap<String, Artifact>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|source| CliError::Write { path: root.to_path_buf(), source })?;
        Ok(OutputDir { root: root.to_path_buf(), written: BTreeMap::new() })
    }

    /// Writes `bytes` to `rel` (slash-separated, relative to the root).
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        let io = |source| CliError::Write { path: path.clone(), source };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(&path, bytes).map_err(io)?;
        let artifact = Artifact { path: rel.to_string(), sha256: digest_hex(bytes), bytes: bytes.len() as u64 };
        self.written.insert(rel.to_string(), artifact);
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes whatever `fill` produces, typically a CSV table.
    pub fn write_with<E>(&mut self, rel: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> Result<(), CliError>
    where
        CliError: From<E>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(rel, &buf)
    }

    /// Writes the manifest listing every artifact, sorted by path.
    pub fn finish(mut self, command: &Command, config: &RunConfig, config_digest: &str) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            version: FORMAT_VERSION.to_string(),
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.clone(),
            seed: config.seed,
            config_digest: config_digest.to_string(),
            config: config.clone(),
            artifacts: std::mem::take(&mut self.written).into_values().collect(),
        };
        self.write_json(MANIFEST, &manifest)?;
        Ok(self.root.join(MANIFEST))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_sorted_artifacts_with_digests() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(&dir.path().join("run")).unwrap();
        out.write("b.txt", b"bee").unwrap();
        out.write("models/a.json", b"{}").unwrap();
        let path = out.finish(&Command::FitIr, &RunConfig::default(), "abc").unwrap();
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let paths: Vec<_> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, ["b.txt", "models/a.json"]);
        assert_eq!(m.artifacts[0].sha256, digest_hex(b"bee"));
        assert_eq!(m.artifacts[0].bytes, 3);
        assert_eq!(m.command, Command::FitIr);
        assert!(dir.path().join("run/models/a.json").exists());
    }
}
