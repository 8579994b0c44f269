use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Flat `key = value` settings: config file first, then `--key value` flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl RawConfig {
    /// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", i + 1)))?;
            let key = normalize(k);
            if key.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", i + 1)));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(RawConfig { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// Applies `--key value` flags over the file settings. A flag followed by
    /// another flag (or nothing) is a boolean switch set to `true`.
    /// `--config path` loads a file first.
    pub fn from_args(args: &[String]) -> Result<Self> {
        let mut flags = Vec::new();
        let mut config_file = None;
        let mut i = 0;
        while i < args.len() {
            let key = args[i]
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("unexpected argument {:?}", args[i])))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (normalize(k), v.to_string()),
                None => match args.get(i + 1) {
                    Some(v) if !v.starts_with("--") => {
                        i += 1;
                        (normalize(key), v.clone())
                    }
                    _ => (normalize(key), "true".to_string()),
                },
            };
            if key == "config" {
                config_file = Some(value);
            } else {
                flags.push((key, value));
            }
            i += 1;
        }
        let mut cfg = match config_file {
            Some(p) => Self::load(p)?,
            None => RawConfig::default(),
        };
        for (k, v) in flags {
            cfg.values.insert(k, v);
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize(key), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Fails on the first key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))),
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key).map(String::as_str) {
            None | Some("none") | Some("") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.values.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
    {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad list entry {s:?} for {key}"))))
                .collect(),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get_str(key).ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }
}

/// Renders settings as sorted `key = value` lines.
pub fn render(entries: &BTreeMap<String, String>) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
