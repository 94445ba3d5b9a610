//! Run manifests and the output writer that records every file it emits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    /// Input label (file path or `bundled:<name>`) to SHA-256 of its bytes.
    pub config_digests: BTreeMap<String, String>,
    pub outputs: Vec<OutputRecord>,
    pub started: String,
    pub finished: String,
}

/// Collects outputs for one command; [`Run::finish`] writes the manifest.
pub struct Run {
    out_dir: PathBuf,
    name: String,
    manifest: RunManifest,
}

impl Run {
    pub fn start(out_dir: &Path, command: &str, seed: Option<u64>, threads: usize) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            name: format!("manifest-{command}.json"),
            manifest: RunManifest {
                schema: MANIFEST_SCHEMA,
                tool: env!("CARGO_BIN_NAME").to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command: std::env::args().collect(),
                seed,
                threads,
                config_digests: BTreeMap::new(),
                outputs: Vec::new(),
                started: chrono::Utc::now().to_rfc3339(),
                finished: String::new(),
            },
        })
    }

    /// Records the effective seed once configs are loaded.
    pub fn set_seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn record_input(&mut self, label: impl Into<String>, bytes: &[u8]) {
        self.manifest.config_digests.insert(label.into(), sha256_hex(bytes));
    }

    fn emit(&mut self, file: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(file);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(OutputRecord {
            path: file.to_string(),
            sha256: sha256_hex(bytes),
        });
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// Writes `value` as pretty JSON with a top-level `manifest` field.
    pub fn write_json(&mut self, file: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut json = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut json {
            map.insert("manifest".into(), self.name.clone().into());
        }
        let mut bytes = serde_json::to_vec_pretty(&json)?;
        bytes.push(b'\n');
        self.emit(file, &bytes)
    }

    /// Writes a CSV whose first line is a `# manifest: ...` comment.
    pub fn write_csv<F>(&mut self, file: &str, header: &[&str], fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
    {
        let mut body = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut body);
            w.write_record(header)?;
            fill(&mut w)?;
            w.flush()?;
        }
        self.write_csv_body(file, body)
    }

    /// Like [`Run::write_csv`] for an already rendered CSV body.
    pub fn write_csv_body(&mut self, file: &str, body: Vec<u8>) -> Result<PathBuf> {
        let mut bytes = format!("# manifest: {}\n", self.name).into_bytes();
        bytes.extend(body);
        self.emit(file, &bytes)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.finished = chrono::Utc::now().to_rfc3339();
        let path = self.out_dir.join(&self.name);
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
