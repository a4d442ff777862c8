//! Key/value hint objects.
//!
//! Values are strings. Binary values go through [`Info::set_hex`], which
//! stores lowercase hexadecimal, two characters per byte.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Info {
    entries: BTreeMap<String, String>,
}

impl Info {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: &str) {
        assert!(!key.is_empty(), "info keys must be nonempty");
        self.entries.insert(key.to_owned(), value.to_owned());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Stores `value` hex-encoded under `key`, replacing any previous value.
    pub fn set_hex(&mut self, key: &str, value: &[u8]) {
        self.set(key, &hex::encode(value));
    }

    pub fn get_hex(&self, key: &str) -> Result<Vec<u8>> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::NotFound(key.to_owned()))?;
        // hex::decode also accepts uppercase digits; stored values are lowercase only.
        if raw.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(Error::BadEncoding(key.to_owned()));
        }
        hex::decode(raw).map_err(|_| Error::BadEncoding(key.to_owned()))
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}
