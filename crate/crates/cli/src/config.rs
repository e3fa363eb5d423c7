//! Line-oriented `section.key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key a command reads is
//! recorded; keys that remain unread when the command finishes resolving
//! its settings are rejected, so typos fail fast instead of silently using
//! defaults. Each run writes the fully resolved set back to
//! `resolved-config.txt` next to its outputs, and re-running from that
//! file alone reproduces the outputs byte for byte at a fixed seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

/// Parsed key/value settings plus consumption tracking.
pub struct RunConfig {
    values: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
    /// Fully resolved settings (defaults included) for the config copy.
    resolved: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "{source}:{}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError(format!("{source}:{}: bad key `{key}`", lineno + 1)));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(ConfigError(format!("{source}:{}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self { values, consumed: BTreeSet::new(), resolved: BTreeMap::new() })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Self::parse("", "<empty>"),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    /// Force a value (command-line override).
    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.values.get(key).cloned()
    }

    pub fn get_str(&mut self, key: &str, default: &str) -> String {
        let v = self.raw(key).unwrap_or_else(|| default.to_string());
        self.resolved.insert(key.to_string(), v.clone());
        v
    }

    pub fn get_f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = match self.raw(key) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|_| ConfigError(format!("key `{key}`: `{s}` is not a number")))?,
            None => default,
        };
        self.resolved.insert(key.to_string(), format!("{v}"));
        Ok(v)
    }

    pub fn get_usize(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        let v = match self.raw(key) {
            Some(s) => s
                .parse::<usize>()
                .map_err(|_| ConfigError(format!("key `{key}`: `{s}` is not a nonnegative integer")))?,
            None => default,
        };
        self.resolved.insert(key.to_string(), format!("{v}"));
        Ok(v)
    }

    pub fn get_u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        let v = match self.raw(key) {
            Some(s) => s
                .parse::<u64>()
                .map_err(|_| ConfigError(format!("key `{key}`: `{s}` is not an integer")))?,
            None => default,
        };
        self.resolved.insert(key.to_string(), format!("{v}"));
        Ok(v)
    }

    pub fn get_bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        let v = match self.raw(key) {
            Some(s) => match s.as_str() {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                other => return Err(ConfigError(format!("key `{key}`: `{other}` is not a bool"))),
            },
            None => default,
        };
        self.resolved.insert(key.to_string(), format!("{v}"));
        Ok(v)
    }

    /// Optional path; no default recorded when absent.
    pub fn get_path_opt(&mut self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        if let Some(ref s) = v {
            self.resolved.insert(key.to_string(), s.clone());
        }
        v.map(PathBuf::from)
    }

    /// Comma-separated floats.
    pub fn get_f64_list(&mut self, key: &str, default: &str) -> Result<Vec<f64>, ConfigError> {
        let s = self.get_str(key, default);
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| ConfigError(format!("key `{key}`: `{p}` is not a number")))
            })
            .collect()
    }

    /// Comma-separated integers.
    pub fn get_usize_list(&mut self, key: &str, default: &str) -> Result<Vec<usize>, ConfigError> {
        let s = self.get_str(key, default);
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| ConfigError(format!("key `{key}`: `{p}` is not an integer")))
            })
            .collect()
    }

    /// Fails on any key never consumed by the command.
    pub fn reject_unknown(&self) -> Result<(), ConfigError> {
        let unknown: Vec<&String> =
            self.values.keys().filter(|k| !self.consumed.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(format!(
                "unknown key(s): {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }

    /// The resolved settings as config-file text.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
