//! Run manifests: flat `key=value` text recording how outputs were produced.
//!
//! Output locations and wall-clock timings are left out by default so that two
//! runs with equal inputs produce byte-identical directories.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::layout::Written;

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const CHECKSUM_PREFIX: &str = "checksum.";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = RunManifest::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .ok_or_else(|| CliError::Usage(format!("manifest lacks '{key}'")))
    }

    /// Parses `key` with `FromStr`, reporting the key on failure.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| CliError::Usage(format!("manifest value {key}={raw} is malformed")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Checksum entries keyed by relative file path.
    pub fn checksums(&self) -> Vec<(&str, &str)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(CHECKSUM_PREFIX).map(|f| (f, v.as_str())))
            .collect()
    }

    /// Adds a SHA-256 entry for every file in `written`, in sorted order.
    pub fn add_checksums(&mut self, written: &Written) -> CliResult<()> {
        let mut files = written.files.clone();
        files.sort();
        for rel in files {
            let digest = file_sha256(&written.root.join(&rel))?;
            self.set(&format!("{CHECKSUM_PREFIX}{rel}"), digest);
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> CliResult<Self> {
        let mut m = RunManifest::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("manifest line {} has no '='", n + 1)))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text)
    }
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut m = RunManifest::new("simulate");
        m.set("seed", 7);
        m.set("path", "a=b");
        m.set("seed", 8);
        let back = RunManifest::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.parse::<u64>("seed").unwrap(), 8);
        assert_eq!(back.get("path"), Some("a=b"));
        assert!(back.parse::<u64>("path").is_err());
    }

    #[test]
    fn sha256_of_known_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            file_sha256(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
