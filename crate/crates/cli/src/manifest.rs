//! Run manifests: one text file per produced artifact, recording tool
//! version, resolved configuration (and its hash), seed, inputs and outputs.
//! Timestamps live only here, never in the artifacts themselves.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::{CliError, EXIT_PROCESSING};

pub struct Manifest {
    command: &'static str,
    seed: Option<u64>,
    cfg: Vec<(String, String)>,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<(String, PathBuf)>,
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            seed: None,
            cfg: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn cfg(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.cfg.push((key.to_string(), value.to_string()));
        self
    }

    pub fn input(&mut self, label: &str, path: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push((label.to_string(), path.into()));
        self
    }

    pub fn output(&mut self, label: &str, path: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push((label.to_string(), path.into()));
        self
    }

    /// Write `<artifact>.manifest` next to the primary artifact.
    pub fn write_next_to(&self, artifact: &Path) -> Result<(), CliError> {
        let path = manifest_path(artifact);
        let mut out = String::new();
        out.push_str("tonedetect-manifest v1\n");
        let _ = writeln!(out, "tool tonedetect {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "command {}", self.command);
        let unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(out, "created_unix {unix}");
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed {seed}");
        }
        let mut canonical = String::new();
        for (k, v) in &self.cfg {
            let _ = writeln!(canonical, "{k} {v}");
        }
        let _ = writeln!(out, "config_hash sha256:{}", hex(&Sha256::digest(canonical.as_bytes())));
        for (k, v) in &self.cfg {
            let _ = writeln!(out, "cfg {k} {v}");
        }
        for (label, p) in &self.inputs {
            let _ = writeln!(out, "input {label} {} sha256:{}", p.display(), file_hash(p)?);
        }
        for (label, p) in &self.outputs {
            let _ = writeln!(out, "output {label} {} sha256:{}", p.display(), file_hash(p)?);
        }
        std::fs::write(&path, out).map_err(|e| CliError {
            code: EXIT_PROCESSING,
            message: format!("cannot write manifest {}: {e}", path.display()),
        })
    }
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    artifact.with_file_name(name)
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError {
        code: EXIT_PROCESSING,
        message: format!("cannot hash {}: {e}", path.display()),
    })?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}
