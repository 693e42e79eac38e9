//! Run manifests: what went in, what came out, and with which settings.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub core_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Collects hashes of inputs and outputs for one command.
pub struct Recorder {
    out_dir: PathBuf,
    inputs: Vec<FileHash>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Recorder {
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
        for p in paths {
            self.input(p)?;
        }
        Ok(())
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn outputs(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(paths);
    }

    /// Hashes every recorded output and writes `manifest.json` next to them.
    pub fn finish(
        self,
        command: &str,
        seed: u64,
        config: impl Serialize,
        parameters: impl Serialize,
    ) -> Result<PathBuf> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in &self.outputs {
            let rel = p.strip_prefix(&self.out_dir).unwrap_or(p);
            outputs.push(FileHash {
                path: rel.display().to_string(),
                sha256: sha256_file(p)?,
            });
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: funcq::VERSION.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            parameters: serde_json::to_value(parameters)?,
            inputs: self.inputs,
            outputs,
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
