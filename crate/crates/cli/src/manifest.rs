//! Per-stage manifests: content hashes of every input and output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{runtime, CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Paths relative to the output root.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(runtime)?;
    Ok(sha256_hex(&bytes))
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Collects the files a stage reads and writes.
pub struct StageRecorder {
    root: PathBuf,
    stage: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl StageRecorder {
    pub fn new(root: &Path, stage: &str) -> Self {
        Self {
            root: root.to_path_buf(),
            stage: stage.to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn stage_dir(&self) -> PathBuf {
        self.root.join(&self.stage)
    }

    /// Read an input file and record its hash.
    pub fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(runtime)?;
        self.inputs
            .insert(relative(&self.root, path), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> CliResult<String> {
        String::from_utf8(self.read(path)?)
            .map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))
    }

    /// Write an output file (creating parent directories) and record it.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))
                .map_err(runtime)?;
        }
        std::fs::write(path, bytes)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
        self.outputs
            .insert(relative(&self.root, path), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    pub fn finish(self, seed: u64, config_sha256: &str) -> CliResult<Manifest> {
        let manifest = Manifest {
            stage: self.stage.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: config_sha256.to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = self.root.join(&self.stage).join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
        text.push('\n');
        std::fs::create_dir_all(path.parent().expect("stage dir")).map_err(runtime)?;
        std::fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
        Ok(manifest)
    }
}

/// Load a previous stage's manifest, or fail with `MissingArtifact`.
pub fn require_stage(root: &Path, stage: &str) -> CliResult<Manifest> {
    let path = root.join(stage).join(MANIFEST_FILE);
    let text =
        std::fs::read_to_string(&path).map_err(|_| CliError::MissingArtifact(stage.to_string()))?;
    serde_json::from_str(&text).map_err(|_| CliError::MissingArtifact(stage.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_relative_paths_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = StageRecorder::new(dir.path(), "demo");
        let out = rec.stage_dir().join("sub").join("a.txt");
        rec.write(&out, b"abc").unwrap();
        let m = rec.finish(3, "cfg").unwrap();
        assert_eq!(
            m.outputs["demo/sub/a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(require_stage(dir.path(), "demo").unwrap(), m);
        assert!(
            matches!(require_stage(dir.path(), "other"), Err(CliError::MissingArtifact(s)) if s == "other")
        );
    }
}
