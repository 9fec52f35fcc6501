//! Run manifests: a sorted `key = value` text file per command recording the
//! resolved configuration, seeds, tool version, and a SHA-256 hash of every
//! input file the run read. The manifest is the reproducibility contract —
//! and, for adaptation, the proof that no source-domain file was touched.
//! No timestamps: re-running a command must produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// Hex SHA-256 of a file's contents.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Accumulates reproducibility facts for one command invocation.
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("command".into(), command.to_string());
        entries.insert("version".into(), env!("CARGO_PKG_VERSION").to_string());
        Self { entries }
    }

    /// Records a resolved configuration value under `config.<key>`.
    pub fn config(&mut self, key: &str, value: impl Display) {
        self.entries
            .insert(format!("config.{key}"), value.to_string());
    }

    /// Records an input file: its path and content hash. Every file a
    /// command reads must pass through here.
    pub fn input(&mut self, label: &str, path: &Path) -> Result<()> {
        self.entries
            .insert(format!("input.{label}.path"), path.display().to_string());
        self.entries
            .insert(format!("input.{label}.sha256"), sha256_hex(path)?);
        Ok(())
    }

    /// Records an output file after it has been written.
    pub fn output(&mut self, label: &str, path: &Path) -> Result<()> {
        self.entries
            .insert(format!("output.{label}.path"), path.display().to_string());
        self.entries
            .insert(format!("output.{label}.sha256"), sha256_hex(path)?);
        Ok(())
    }

    /// Free-form fact (seed, cell counts, accuracy headline).
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Writes `key = value` lines sorted by key.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(v);
            text.push('\n');
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_sorted_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "data").unwrap();

        let build = || {
            let mut m = Manifest::new("demo");
            m.config("seed", 7);
            m.config("alpha", 0.99);
            m.input("weather", &input).unwrap();
            m.note("cells", 4);
            m
        };
        let p1 = dir.path().join("m1.txt");
        let p2 = dir.path().join("m2.txt");
        build().write(&p1).unwrap();
        build().write(&p2).unwrap();

        let t1 = fs::read_to_string(&p1).unwrap();
        assert_eq!(t1, fs::read_to_string(&p2).unwrap());
        let keys: Vec<&str> = t1.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted, "keys must be written in sorted order");
        assert!(t1.contains("config.alpha = 0.99"));
        assert!(t1.contains("input.weather.sha256 = "));
    }

    #[test]
    fn hash_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("abc.txt");
        fs::write(&f, "abc").unwrap();
        assert_eq!(
            sha256_hex(&f).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
