//! Flat key-value config files (`key = value`, `#` comments) with CLI flags
//! taking precedence over file values, which take precedence over defaults.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use tkml::{Error, Result};

#[derive(Debug, Default)]
pub struct Settings {
    values: HashMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or(Error::Parse {
                    line: idx + 1,
                    message: format!("expected `key = value`, got `{raw}`"),
                })?;
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { values })
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::InvalidParameter {
                name: "config",
                reason: format!("cannot parse `{raw}` for key `{key}`"),
            }
        })
    }

    /// Flag wins, then config file, then the default.
    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Ok(default),
        }
    }

    /// Same precedence but without a default.
    pub fn get_opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(raw) => Ok(Some(self.parse(key, raw)?)),
            None => Ok(None),
        }
    }

    /// Comma-separated list value; the flag (possibly repeated) wins when
    /// non-empty.
    pub fn get_list<T: FromStr>(&self, key: &str, flag: &[T], default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
    {
        if !flag.is_empty() {
            return Ok(flag.to_vec());
        }
        match self.values.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|part| self.parse(key, part.trim()))
                .collect(),
            None => Ok(default.to_vec()),
        }
    }
}
