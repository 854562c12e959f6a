//! Run manifests: the resolved configuration and artifact hashes of every
//! command, written alongside its outputs. Re-running a command from the
//! same manifest inputs reproduces the outputs bit-identically, and the
//! manifest itself contains no volatile fields.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub seed: Option<u64>,
    pub resolved_config: serde_json::Value,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &'static str, seed: Option<u64>, resolved_config: serde_json::Value) -> Self {
        RunManifest {
            command,
            seed,
            resolved_config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRef {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileRef {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}

/// Default output directory: `ESTAFETTE_OUT_DIR` when set, else the current
/// directory. Explicit flags always win.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os("ESTAFETTE_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}
