//! Line-oriented `KEY: value` / `key = value` text files.
//!
//! Used by RPC files, raster sidecars and pipeline config files. Blank lines
//! and lines starting with `#` are ignored; the first `:` or `=` on a line
//! separates the key from the value.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: Vec<(String, String)>,
    index: HashMap<String, usize>,
}

impl KeyValues {
    pub fn parse(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut kv = KeyValues { path: path.clone(), ..Default::default() };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some(split) = line.find([':', '=']) else {
                return Err(Error::parse(&path, format!("line {}: expected `KEY: value`, found {line:?}", lineno + 1)));
            };
            let key = line[..split].trim();
            let value = line[split + 1..].trim();
            if key.is_empty() {
                return Err(Error::parse(&path, format!("line {}: empty key", lineno + 1)));
            }
            kv.insert(key, value);
        }
        Ok(kv)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Later occurrences of a key override earlier ones.
    pub fn insert(&mut self, key: &str, value: &str) {
        match self.index.get(key) {
            Some(&i) => self.entries[i].1 = value.to_string(),
            None => {
                self.index.insert(key.to_string(), self.entries.len());
                self.entries.push((key.to_string(), value.to_string()));
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.entries[i].1.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::parse(&self.path, format!("missing key {key}")))
    }

    /// Parses the first whitespace-separated token, so trailing unit labels
    /// such as `LINE_OFF: 1024.5 pixels` are accepted.
    pub fn number<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        let token = raw.split_whitespace().next().unwrap_or("");
        token.parse().map_err(|_| Error::parse(&self.path, format!("key {key}: cannot parse {raw:?} as a number")))
    }

    pub fn number_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        if self.contains(key) {
            self.number(key)
        } else {
            Ok(default)
        }
    }

    pub fn numbers(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(key)?;
        raw.split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(&self.path, format!("key {key}: cannot parse {t:?} as a number")))
            })
            .collect()
    }
}

/// Serialises entries as `KEY: value` lines.
pub fn write_entries<'a>(out: &mut String, entries: impl IntoIterator<Item = (&'a str, String)>) {
    for (k, v) in entries {
        let _ = writeln!(out, "{k}: {v}");
    }
}

/// Round-trip exact formatting for an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}
