//! Plain-text `key=value` records with dotted section prefixes
//! (`sched3d.steps=50`). Used for run configs and manifests.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Blank lines and `#` comments are skipped; duplicate keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: k + 1,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: "empty key".into(),
                });
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: format!("duplicate key '{key}'"),
                });
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Format {
                path: path.to_path_buf(),
                msg: format!("line {line}: {msg}"),
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::InvalidParameter(format!("{key}={v}: {e}"))),
        }
    }

    /// Parsed value or `default` when absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KeyValues {
        let p = format!("{prefix}.");
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Entries whose key does not start with `prefix`.
    pub fn without_prefix(&self, prefix: &str) -> KeyValues {
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| !k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copy every entry of `other` under `prefix.`.
    pub fn set_section(&mut self, prefix: &str, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(format!("{prefix}.{k}"), v.clone());
        }
    }

    /// Merge `other` over `self`.
    pub fn merged(&self, other: &KeyValues) -> KeyValues {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|(k, v)| (k.clone(), v.clone())));
        KeyValues { entries }
    }

    /// Error on any key outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::InvalidParameter(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }

    /// Sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of [`KeyValues::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Parse `true/false/1/0/on/off`.
pub fn parse_flag(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::InvalidParameter(format!("expected a boolean, got '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_and_sections() {
        let kv = KeyValues::parse("# run\nsched3d.steps = 50\nsched3d.kind=cosine\n\nsampler.gamma_3d=3.0\n").unwrap();
        assert_eq!(kv.get::<usize>("sched3d.steps").unwrap(), Some(50));
        assert_eq!(kv.get_or("missing", 7usize).unwrap(), 7);
        let s = kv.section("sched3d");
        assert_eq!(s.len(), 2);
        assert_eq!(s.get_str("kind"), Some("cosine"));
        let mut wrapped = KeyValues::new();
        wrapped.set_section("config", &kv);
        assert_eq!(wrapped.section("config"), kv);
        assert_eq!(kv.without_prefix("sched3d.").len(), 1);
        assert!(kv.get::<usize>("sched3d.kind").is_err());
        assert!(kv.check_known(&["sched3d.steps", "sched3d.kind"]).is_err());
        assert!(matches!(KeyValues::parse("a=1\na=2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("a=1\nnope"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_flag("on").unwrap() && !parse_flag("0").unwrap() && parse_flag("x").is_err());
    }

    #[test]
    fn hash_is_order_independent() {
        let a = KeyValues::parse("x=1\ny=2").unwrap();
        let b = KeyValues::parse("y=2\nx=1").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), KeyValues::parse("x=1\ny=3").unwrap().hash());
    }

    proptest! {
        #[test]
        fn text_round_trip(map in proptest::collection::btree_map("[a-z][a-z0-9_.]{0,8}", "[a-zA-Z0-9_.:,-]{0,12}", 0..12)) {
            let mut kv = KeyValues::new();
            for (k, v) in &map {
                kv.set(k.clone(), v);
            }
            prop_assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
        }
    }
}
