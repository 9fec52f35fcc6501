//! Layered configuration: built-in defaults, overridden by a `key = value`
//! config file, overridden by command-line flags. The file format is plain
//! text: one `key = value` per line, `#` comments, blank lines ignored.
//! Unknown keys are rejected so typos fail loudly instead of silently
//! falling back to defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Result};

use crate::errors::CliError;

/// Every key a config file may set, across all commands.
pub const KNOWN_KEYS: [&str; 19] = [
    "alpha",
    "batch_size",
    "classes",
    "early_stop",
    "epochs",
    "k_features",
    "labeled_fraction_per_batch",
    "lambda",
    "lr",
    "max_depth",
    "max_epochs",
    "min_samples_split",
    "p",
    "patience",
    "rows",
    "seed",
    "temperature",
    "train_patience",
    "trees",
];

/// Parsed config-file contents; empty when no file was given.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("config file {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "{}:{}: unknown config key '{key}' (known: {})",
                    path.display(),
                    lineno + 1,
                    KNOWN_KEYS.join(", ")
                ))
                .into());
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Resolves one setting: flag beats file beats default.
    pub fn resolve<T: FromStr + Clone>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted config key {key}");
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse::<T>().map_err(|e| {
                anyhow!(CliError::Usage(format!(
                    "config key '{key}': cannot parse '{raw}': {e}"
                )))
            }),
            None => Ok(default),
        }
    }

    /// Resolves an optional setting with no default.
    pub fn resolve_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                anyhow!(CliError::Usage(format!(
                    "config key '{key}': cannot parse '{raw}': {e}"
                )))
            }),
            None => Ok(None),
        }
    }
}
