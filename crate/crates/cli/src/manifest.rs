//! Artifact bookkeeping for command runs.
//!
//! Every file a command produces is recorded with its relative path, byte
//! size, and sha256 digest; the run ends by writing `manifest.json` with the
//! run parameters, the effective seed, and that artifact table. Paths inside
//! the manifest are relative to the output directory so two runs of the same
//! configuration into different directories produce byte-identical trees.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
struct ArtifactEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

/// Collects artifacts as they are written and emits the final manifest.
pub struct ArtifactLog {
    out_dir: PathBuf,
    created: bool,
    entries: Vec<ArtifactEntry>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format: u32,
    command: &'a str,
    seed: u64,
    package: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    artifacts: &'a [ArtifactEntry],
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

impl ArtifactLog {
    pub fn new(out_dir: &Path) -> Self {
        ArtifactLog {
            out_dir: out_dir.to_path_buf(),
            created: false,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    fn file(&mut self, name: &str) -> Result<PathBuf, CliError> {
        if !self.created {
            fs::create_dir_all(&self.out_dir)
                .map_err(|e| CliError::Validation(format!("cannot create output dir: {e}")))?;
            self.created = true;
        }
        Ok(self.out_dir.join(name))
    }

    fn record(&mut self, name: &str) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        let bytes = fs::read(&path)
            .map_err(|e| CliError::Validation(format!("cannot read back {name}: {e}")))?;
        self.entries.push(ArtifactEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes one artifact through the given writer and records it.
    pub fn add_with(
        &mut self,
        name: &str,
        write: impl FnOnce(&Path) -> defectscope::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.file(name)?;
        write(&path).map_err(CliError::from)?;
        self.record(name)
    }

    /// Writes a text artifact (CSV and friends) and records it.
    pub fn add_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.file(name)?;
        fs::write(&path, text)
            .map_err(|e| CliError::Validation(format!("cannot write {name}: {e}")))?;
        self.record(name)
    }

    /// Serializes a JSON artifact with stable formatting and records it.
    pub fn add_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Validation(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        self.add_text(name, &text)
    }

    /// Writes `manifest.json` describing the whole run. The manifest itself
    /// is not listed among the artifacts.
    pub fn finish(mut self, command: &str, seed: u64, config: &RunConfig) -> Result<(), CliError> {
        let manifest = Manifest {
            format: 1,
            command,
            seed,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            artifacts: &self.entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Validation(format!("cannot serialize manifest: {e}")))?;
        text.push('\n');
        let path = self.file("manifest.json")?;
        fs::write(&path, text)
            .map_err(|e| CliError::Validation(format!("cannot write manifest: {e}")))?;
        Ok(())
    }
}
