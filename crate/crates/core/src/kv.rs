//! Plain-text `key = value` documents used for model and environment files.
//!
//! One entry per line; `#` starts a comment; blank lines are ignored. Keys
//! may repeat only where the consumer says so.

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

#[derive(Clone, Debug, Default)]
pub struct Document {
    pub entries: Vec<Entry>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse { line, message: "empty key".into() });
            }
            entries.push(Entry { line, key: key.to_string(), value: value.trim().to_string() });
        }
        Ok(Document { entries })
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn require(&self, key: &str) -> Result<&Entry> {
        self.get(key).ok_or_else(|| Error::Parse { line: 0, message: format!("missing key `{key}`") })
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            Some(e) => e.parse(),
            None => Ok(default),
        }
    }
}

impl Entry {
    pub fn parse<T: FromStr>(&self) -> Result<T> {
        self.value.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("cannot parse `{}` for `{}`", self.value, self.key),
        })
    }

    /// Splits `a=1 b=2` style inline attributes.
    pub fn attributes(&self) -> Result<Vec<(&str, &str)>> {
        self.value
            .split_whitespace()
            .map(|tok| {
                tok.split_once('=').ok_or_else(|| Error::Parse {
                    line: self.line,
                    message: format!("expected `name=value` attribute, got `{tok}`"),
                })
            })
            .collect()
    }

    pub fn parse_attr<T: FromStr>(&self, name: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("cannot parse attribute `{name}={raw}`"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let doc = Document::parse("# header\n\na = 1\nb=two # trailing\n").unwrap();
        assert_eq!(doc.entries.len(), 2);
        assert_eq!(doc.require("a").unwrap().parse::<i32>().unwrap(), 1);
        assert_eq!(doc.get("b").unwrap().value, "two");
        assert_eq!(doc.get("b").unwrap().line, 4);
    }

    #[test]
    fn reports_line_of_bad_entry() {
        match Document::parse("a = 1\nnonsense\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn attributes_split() {
        let doc = Document::parse("link = length=1.5 mass=2").unwrap();
        let attrs = doc.entries[0].attributes().unwrap();
        assert_eq!(attrs, vec![("length", "1.5"), ("mass", "2")]);
    }
}
