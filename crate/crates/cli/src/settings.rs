//! Flat `key = value` configuration files and flag/file/default precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Result;

use crate::exit::{IoFailure, ValidationFailure};

/// Keys a configuration file may set; they mirror the long flag names.
pub const KNOWN_KEYS: &[&str] = &[
    "form",
    "k",
    "regime",
    "shots",
    "min-instances",
    "dev-fraction",
    "test-fraction",
    "drop-thin",
    "base-count",
    "alpha",
    "epochs",
    "lr",
    "batch-size",
    "dropout",
    "seed",
    "warmup",
    "weight-decay",
    "threshold",
    "selection",
    "hidden-dim",
    "ffn-dim",
    "max-len",
    "encoder-seed",
    "attention",
    "prefix",
    "prefix-hidden",
    "set",
    "types",
    "preset",
];

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
    data_root: Option<PathBuf>,
}

impl Settings {
    pub fn new(config: Option<&Path>, data_root: Option<PathBuf>) -> Result<Self> {
        let mut settings = Settings {
            data_root,
            ..Default::default()
        };
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| IoFailure(format!("cannot read config {}: {e}", path.display())))?;
            settings.values =
                parse(&text).map_err(|m| ValidationFailure(format!("{}: {m}", path.display())))?;
            settings.source = Some(path.to_path_buf());
        }
        Ok(settings)
    }

    /// Flag value, else config-file value, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted key {key}");
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e: T::Err| {
                let src = self.source.as_deref().unwrap_or(Path::new("config"));
                ValidationFailure(format!(
                    "{}: bad value `{raw}` for `{key}`: {e}",
                    src.display()
                ))
                .into()
            }),
        }
    }

    /// Resolves an input path against the data root when it is relative.
    pub fn input(&self, path: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }
}

fn parse(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        let key = key.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(format!("line {}: unknown key `{key}`", i + 1));
        }
        let value = value.trim().trim_matches('"').to_string();
        if out.insert(key.clone(), value).is_some() {
            return Err(format!("line {}: `{key}` set twice", i + 1));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let settings = Settings {
            values: parse("# run settings\nlr = 0.01\nbatch_size = 4\n").unwrap(),
            ..Default::default()
        };
        assert_eq!(settings.pick(Some(0.5), "lr", 1.0).unwrap(), 0.5);
        assert_eq!(settings.pick(None, "lr", 1.0).unwrap(), 0.01);
        assert_eq!(settings.pick(None, "batch-size", 16usize).unwrap(), 4);
        assert_eq!(settings.pick(None, "epochs", 3usize).unwrap(), 3);
    }

    #[test]
    fn rejects_unknown_and_malformed_lines() {
        assert!(parse("colour = red").is_err());
        assert!(parse("lr 0.1").is_err());
        assert!(parse("lr = 1\nlr = 2").is_err());
        let settings = Settings {
            values: parse("epochs = many").unwrap(),
            ..Default::default()
        };
        assert!(settings.pick(None, "epochs", 3usize).is_err());
    }

    #[test]
    fn data_root_applies_to_relative_inputs() {
        let settings = Settings {
            data_root: Some(PathBuf::from("/data")),
            ..Default::default()
        };
        assert_eq!(
            settings.input(Path::new("c.jsonl")),
            PathBuf::from("/data/c.jsonl")
        );
        assert_eq!(
            settings.input(Path::new("/x/c.jsonl")),
            PathBuf::from("/x/c.jsonl")
        );
    }
}
