//! Flat `key = value` configuration files with `#` comments. Values stay
//! strings here; consumers parse them with typed accessors.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

pub fn parse_config(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", lineno + 1)));
        }
    }
    Ok(map)
}

pub fn load_config(path: &Path) -> Result<HashMap<String, String>> {
    parse_config(&std::fs::read_to_string(path)?)
}

pub fn get_parsed<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}"))),
    }
}
