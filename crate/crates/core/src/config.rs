//! `key = value` text configuration.
//!
//! One pair per line. Blank lines and lines starting with `#` are ignored.
//! Later keys override earlier ones; order of first appearance is kept.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueConfig {
    entries: Vec<(String, String)>,
}

impl KeyValueConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = KeyValueConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Row {
                path: origin.to_string(),
                row: lineno + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Row {
                    path: origin.to_string(),
                    row: lineno + 1,
                    message: "empty key".into(),
                });
            }
            cfg.set(key, value.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value.to_string(),
            None => self.entries.push((key.to_string(), value.to_string())),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e: T::Err| {
                Error::InvalidParameter(format!("config key {key}: {raw:?}: {e}"))
            }),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose key starts with `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KeyValueConfig {
        let dotted = format!("{prefix}.");
        KeyValueConfig {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&dotted).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_overrides() {
        let cfg = KeyValueConfig::parse(
            "# profile\n a = 1\n\nb= two words \na = 3\nsec.x = 9\n",
            "t",
        )
        .unwrap();
        assert_eq!(cfg.get("a"), Some("3"));
        assert_eq!(cfg.get("b"), Some("two words"));
        assert_eq!(cfg.get_parsed::<u32>("a").unwrap(), Some(3));
        assert_eq!(cfg.section("sec").get("x"), Some("9"));
        assert_eq!(cfg.iter().count(), 3);
    }

    #[test]
    fn rejects_lines_without_equals() {
        let err = KeyValueConfig::parse("a = 1\nnonsense\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn bad_value_type_is_reported() {
        let cfg = KeyValueConfig::parse("n = x", "t").unwrap();
        assert!(cfg.get_parsed::<f64>("n").is_err());
    }
}
