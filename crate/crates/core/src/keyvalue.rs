//! Key-value config files (TOML syntax) with strict key checking.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

pub(crate) fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text)
}

pub(crate) fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Rejects keys outside `allowed` and reports the first missing `required` key.
pub(crate) fn check_keys(table: &toml::Table, allowed: &[&str], required: &[&str]) -> Result<()> {
    if let Some(key) = table.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::UnknownKey(key.clone()));
    }
    if let Some(key) = required.iter().find(|k| !table.contains_key(**k)) {
        return Err(Error::MissingKey((*key).to_string()));
    }
    Ok(())
}

pub(crate) fn get<T: DeserializeOwned>(table: &toml::Table, key: &str) -> Result<Option<T>> {
    match table.get(key) {
        None => Ok(None),
        Some(value) => value
            .clone()
            .try_into()
            .map(Some)
            .map_err(|e| Error::Config(format!("malformed value for {key}: {e}"))),
    }
}

pub(crate) fn require<T: DeserializeOwned>(table: &toml::Table, key: &str) -> Result<T> {
    get(table, key)?.ok_or_else(|| Error::MissingKey(key.to_string()))
}
