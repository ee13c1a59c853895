//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, keys are unique. Values are
//! kept as strings and parsed on access.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get_str(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}`: bad value {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.get_str(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| Error::Config(format!("`{key}`: bad item {s:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Keys beginning with `prefix`, in sorted order.
    pub fn keys_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .range(prefix.to_string()..)
            .map(|(k, _)| k.as_str())
            .take_while(move |k| k.starts_with(prefix))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    /// Canonical text form: sorted keys, one per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_types() {
        let cfg = FlatConfig::parse(
            "# scenario\nseed = 7\nstations = 50, 124,92 # four\n\nname=demo\nstation.1.capacity = 20\nstation.2.capacity = 24\n",
        )
        .unwrap();
        assert_eq!(cfg.require::<u64>("seed").unwrap(), 7);
        assert_eq!(cfg.get_list::<u32>("stations").unwrap().unwrap(), [50, 124, 92]);
        assert_eq!(cfg.get_str("name"), Some("demo"));
        assert_eq!(cfg.get_or("missing", 3u32).unwrap(), 3);
        assert!(cfg.require::<u32>("missing").is_err());
        assert!(cfg.get::<u32>("name").is_err());
        let keys: Vec<_> = cfg.keys_with_prefix("station.").collect();
        assert_eq!(keys, ["station.1.capacity", "station.2.capacity"]);
        assert_eq!(FlatConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(FlatConfig::parse("a = 1\na = 2\n").is_err());
        assert!(FlatConfig::parse("just words\n").is_err());
        assert!(FlatConfig::parse(" = 3\n").is_err());
    }
}
