//! Flat `key=value` config files with dotted section prefixes.
//!
//! ```text
//! # comment
//! seed = 7
//! attack.tpa.lambda = 5
//! ```
//!
//! Keys are unique; every lookup is recorded so that [`KvFile::finish`] can
//! reject keys nobody asked for.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::Config {
                    line,
                    key: trimmed.to_string(),
                    message: "expected key=value".into(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config {
                    line,
                    key: String::new(),
                    message: "empty key".into(),
                });
            }
            if kv.entries.contains_key(key) {
                return Err(Error::Config {
                    line,
                    key: key.into(),
                    message: "duplicate key".into(),
                });
            }
            kv.entries
                .insert(key.to_string(), (line, value.trim().to_string()));
        }
        Ok(kv)
    }

    /// Inserts or replaces a value; overrides carry line 0.
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|e| Error::Config {
                line: *line,
                key: key.to_string(),
                message: format!("cannot parse `{v}`: {e}"),
            }),
        }
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Config error for `key`, pointing at its line when it came from a file.
    pub fn error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.entries.get(key).map_or(0, |(l, _)| *l),
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Fails on the first key that was never looked up.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::Config {
                line: *line,
                key: k.clone(),
                message: "unknown key".into(),
            }),
        }
    }

    /// Sorted `key=value` lines.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, (_, v))| format!("{k}={v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_sections() {
        let kv = KvFile::parse("# top\nseed = 7\n\nattack.tpa.lambda=5\n").unwrap();
        assert_eq!(kv.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(kv.get::<f64>("attack.tpa.lambda").unwrap(), Some(5.0));
        assert_eq!(kv.get::<f64>("missing").unwrap(), None);
        kv.finish().unwrap();
    }

    #[test]
    fn reports_line_and_key() {
        let kv = KvFile::parse("a=1\nb=oops\n").unwrap();
        match kv.get::<f64>("b") {
            Err(Error::Config { line, key, .. }) => assert_eq!((line, key.as_str()), (2, "b")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            KvFile::parse("a=1\nnot a pair\n"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            KvFile::parse("a=1\na=2\n"),
            Err(Error::Config { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let kv = KvFile::parse("a=1\ntypo=2\n").unwrap();
        let _ = kv.get::<u32>("a");
        assert!(matches!(kv.finish(), Err(Error::Config { line: 2, .. })));
    }
}
