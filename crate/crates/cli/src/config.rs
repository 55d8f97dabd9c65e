//! Key=value config files and the flag > file > default precedence rule.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_err, CliError, CliResult};

/// Every key a config file may set; each corresponds to one command-line
/// flag of the same name.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "workers",
    "views",
    "size",
    "upsample",
    "extent",
    "beta",
    "n-views",
    "k-views",
    "lambda",
    "stage1-lr",
    "stage2-lr",
    "stage1-iters",
    "stage2-iters",
    "cube-distance",
    "mask-threshold",
    "pregen",
    "densify",
];

/// Parsed config file. Values stay as strings until a command asks for them
/// with a concrete type.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig::default()
    }

    /// Lines are `key=value`; blank lines and `#` comments are skipped.
    /// Unknown keys are errors.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Parse(format!(
                    "{}:{}: expected key=value, found `{line}`",
                    path.display(),
                    idx + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Parse(format!(
                    "{}:{}: unknown config key `{key}`",
                    path.display(),
                    idx + 1
                )));
            }
            values.insert(key.to_string(), value.to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered config key {key}");
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Parse(format!("config key `{key}`: bad value `{raw}`"))),
        }
    }
}

/// Flag wins over file value wins over default.
pub fn resolve<T: FromStr>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: T,
) -> CliResult<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(v) = file.get(key)? {
        return Ok(v);
    }
    Ok(default)
}
