//! `key=value` configuration files layered under command-line flags.

use std::fs;
use std::path::Path;

use crate::CliError;

/// Ordered `(key, value)` assignments; later entries win.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    entries: Vec<(String, String)>,
}

impl Settings {
    /// Parses one assignment per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {}: expected key=value, got {raw:?}",
                    no + 1
                ))
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::parse(&fs::read_to_string(p).map_err(essa_core::Error::from)?),
            None => Ok(Self::default()),
        }
    }

    /// Appends a flag value when it was given.
    pub fn push<V: ToString>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.entries.push((key.to_string(), v.to_string()));
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.iter().any(|(k, _)| k == key)
    }

    /// Feeds every entry to `apply`, which returns `Ok(false)` for keys it does not own.
    pub fn apply(
        &self,
        mut apply: impl FnMut(&str, &str) -> Result<bool, CliError>,
    ) -> Result<(), CliError> {
        for (k, v) in &self.entries {
            if !apply(k, v)? {
                return Err(CliError::Usage(format!("unknown config key {k:?}")));
            }
        }
        Ok(())
    }
}

pub fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("bad value {value:?} for {key}")))
}
