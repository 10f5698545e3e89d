//! Plain-text `key = value` files used for manifests and configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::{Error, Result};

/// An ordered set of key/value pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. Blank lines and lines starting with `#`
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut offset = 0u64;
        for (idx, raw) in text.split_inclusive('\n').enumerate() {
            let line = raw.trim();
            if !line.is_empty() && !line.starts_with('#') {
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Error::Format {
                        line: idx + 1,
                        offset,
                        message: format!("expected `key = value`, got {line:?}"),
                    });
                };
                entries.insert(key.trim().to_string(), value.trim().to_string());
            }
            offset += raw.len() as u64;
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::invalid(format!("missing key `{key}`")))
    }

    /// Parses the value for `key`, if present.
    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::invalid(format!("bad value for `{key}` ({raw:?}): {e}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = KeyValues::parse("# header\n\nseed = 7\nname=abc = d\n").unwrap();
        assert_eq!(kv.get("seed"), Some("7"));
        assert_eq!(kv.get("name"), Some("abc = d"));
        assert_eq!(kv.parse_value::<u64>("seed").unwrap(), Some(7));
    }

    #[test]
    fn reports_line_of_malformed_entry() {
        let err = KeyValues::parse("a = 1\nbroken\n").unwrap_err();
        match err {
            Error::Format { line, offset, .. } => {
                assert_eq!(line, 2);
                assert_eq!(offset, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trips_through_text() {
        let mut kv = KeyValues::new();
        kv.set("b", 2).set("a", "x");
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }
}
