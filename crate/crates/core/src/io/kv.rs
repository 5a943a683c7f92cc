//! Line-oriented `key = value` text files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may repeat
//! (the array file lists one `mic` line per microphone).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format!("line {}: expected `key = value`", lineno + 1));
            };
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::format(path, m))
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> std::result::Result<Option<T>, String> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| format!("`{key}`: cannot parse `{v}`")),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> std::result::Result<T, String> {
        self.parse_value(key)?
            .ok_or_else(|| format!("missing key `{key}`"))
    }

    pub fn numbers(value: &str) -> std::result::Result<Vec<f64>, String> {
        value
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: `{s}`")))
            .collect()
    }

    pub fn require_numbers(&self, key: &str, count: usize) -> std::result::Result<Vec<f64>, String> {
        let v = self.get(key).ok_or_else(|| format!("missing key `{key}`"))?;
        let nums = Self::numbers(v)?;
        if nums.len() != count {
            return Err(format!("`{key}`: expected {count} numbers, got {}", nums.len()));
        }
        Ok(nums)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_repeats() {
        let kv = KeyValues::parse("# hdr\nmic = 0 0 0\n\nmic = 1, 0, 0\nc = 343\n").unwrap();
        assert_eq!(kv.get_all("mic").count(), 2);
        assert_eq!(kv.require::<f64>("c").unwrap(), 343.0);
        assert_eq!(KeyValues::numbers("1, 0, 0").unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(KeyValues::parse("just words").is_err());
        let kv = KeyValues::parse("x = nope").unwrap();
        assert!(kv.require::<f64>("x").is_err());
        assert!(kv.require::<f64>("y").is_err());
    }
}
