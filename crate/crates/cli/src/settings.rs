//! Flat `key = value` configuration merged with command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::failure::Failure;

/// Every key a config file may set. Flags use the same names with `-`.
pub const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "bands",
    "bandwidth",
    "c_step",
    "cols",
    "crop",
    "cube",
    "eta",
    "kappa",
    "labels",
    "lambda",
    "layout",
    "max_iter",
    "max_pixels",
    "measurements",
    "mode",
    "mu0",
    "mu_max",
    "noise_db",
    "out",
    "outer_iters",
    "pattern",
    "pred",
    "rho",
    "rows",
    "seed",
    "snapshots",
    "snr_db",
    "subspace_dim",
    "tol",
    "trace",
    "truth",
];

/// Merged settings. Every value read is recorded, defaults included, so
/// the manifest shows the configuration that actually ran.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>, Failure> {
        let mut out = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Failure::config(format!(
                    "{}:{}: expected 'key = value'",
                    origin.display(),
                    n + 1
                ))
            })?;
            let key = normalize(key);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Failure::config(format!(
                    "{}:{}: unknown key '{key}'",
                    origin.display(),
                    n + 1
                )));
            }
            let value = value.trim().trim_matches('"').to_string();
            out.insert(key, value);
        }
        Ok(out)
    }

    /// Config file values overridden by flags.
    pub fn merge(
        config: Option<&Path>,
        flags: Vec<(&str, Option<String>)>,
    ) -> Result<Self, Failure> {
        let mut values = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::missing(format!("{}: {e}", path.display())))?;
                Self::parse_config(&text, path)?
            }
            None => BTreeMap::new(),
        };
        for (key, value) in flags {
            if let Some(v) = value {
                values.insert(normalize(key), v);
            }
        }
        Ok(Self {
            values,
            resolved: BTreeMap::new(),
        })
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get<T>(&mut self, key: &str, default: T) -> Result<T, Failure>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = self.opt(key)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn opt<T>(&mut self, key: &str) -> Result<Option<T>, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => {
                let value = raw
                    .parse()
                    .map_err(|e| Failure::config(format!("bad value '{raw}' for {key}: {e}")))?;
                self.resolved.insert(key.to_string(), raw.clone());
                Ok(Some(value))
            }
        }
    }

    pub fn required<T>(&mut self, key: &str) -> Result<T, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| Failure::config(format!("missing required setting '{key}'")))
    }

    pub fn path(&mut self, key: &str) -> Result<PathBuf, Failure> {
        let p: PathBuf = self.required(key)?;
        if !p.exists() {
            return Err(Failure::missing(format!(
                "{key} file {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}
