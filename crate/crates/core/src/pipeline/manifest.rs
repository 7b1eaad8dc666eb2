//! Run manifests: ordered `key = value` lines.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const SEP: &str = " = ";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry. Keys are unique, non-empty, free of whitespace and
    /// `=`; values are single-line.
    pub fn push(&mut self, key: impl Into<String>, value: impl Display) -> Result<()> {
        let key = key.into();
        let value = value.to_string();
        if key.is_empty() || key.contains(char::is_whitespace) || key.contains('=') {
            return Err(Error::invalid(format!("bad manifest key {key:?}")));
        }
        if value.contains(['\n', '\r']) || value != value.trim() {
            return Err(Error::invalid(format!(
                "manifest value for {key} must be a single trimmed line"
            )));
        }
        if self.get(&key).is_some() {
            return Err(Error::invalid(format!("duplicate manifest key {key}")));
        }
        self.entries.push((key, value));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Parse(format!("manifest has no {key}")))?;
        v.parse()
            .map_err(|_| Error::Parse(format!("manifest {key} = {v} is not a number")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}{SEP}{v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(SEP)
                .or_else(|| line.strip_suffix(" =").map(|k| (k, "")))
                .ok_or_else(|| {
                    Error::Parse(format!("manifest line {}: expected `key = value`", i + 1))
                })?;
            m.push(k, v)
                .map_err(|e| Error::Parse(format!("manifest line {}: {e}", i + 1)))?;
        }
        Ok(m)
    }

    /// Hex SHA-256 over the entries whose key starts with `prefix`.
    pub fn digest(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries.iter().filter(|(k, _)| k.starts_with(prefix)) {
            h.update(k.as_bytes());
            h.update(SEP.as_bytes());
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
    }
}
