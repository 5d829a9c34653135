//! Key=value configuration files. Keys mirror the long flag names; flags
//! always override file values. Unknown keys are schema violations.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{CliError, EXIT_MISSING_INPUT};

#[derive(Debug)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn empty() -> Self {
        Self {
            values: BTreeMap::new(),
        }
    }

    /// Parse `key = value` lines (comments with `#`), validating keys
    /// against the set the command understands.
    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError {
            code: EXIT_MISSING_INPUT,
            message: format!("cannot read config {}: {e}", path.display()),
        })?;
        let mut values = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!(
                    "config {} line {}: expected `key = value`, got {raw:?}",
                    path.display(),
                    ln + 1
                ))
            })?;
            let key = key.trim().to_string();
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::config(format!(
                    "config {} line {}: unknown key {key:?} (allowed: {})",
                    path.display(),
                    ln + 1,
                    allowed.join(", ")
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Resolve one setting: explicit flag, then config file, then default.
    pub fn resolve<T: std::str::FromStr + std::fmt::Display>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse().map_err(|_| {
                CliError::config(format!("config key {key}: cannot parse {raw:?}"))
            }),
            None => Ok(default),
        }
    }
}
