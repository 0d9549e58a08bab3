//! Flat `key=value` files with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed `key=value` pairs, remembering the line each key came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected key=value, found '{line}'"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if entries
                .insert(key.to_string(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line: *line,
                message: format!("invalid value '{v}' for '{key}'"),
            }),
        }
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?.ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing required key '{key}'"),
        })
    }

    /// Errors on the first key outside `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("unknown key '{key}'"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse("# header\nalpha = 0.24 # inline\n\nmode=identity\r\n").unwrap();
        assert_eq!(kv.get("alpha"), Some("0.24"));
        assert_eq!(kv.parsed::<f64>("alpha").unwrap(), Some(0.24));
        assert_eq!(kv.get("mode"), Some("identity"));
        assert_eq!(kv.parsed::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn errors_name_the_line() {
        assert!(matches!(
            KeyValues::parse("a=1\nb\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            KeyValues::parse("a=1\na=2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            KeyValues::parse("=1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let kv = KeyValues::parse("\nx=abc\n").unwrap();
        assert!(matches!(
            kv.parsed::<u32>("x"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            kv.reject_unknown(&["y"]),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(kv.required::<u32>("y").is_err());
    }
}
