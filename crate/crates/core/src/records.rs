//! Line-oriented record format shared by workload, config and scenario files.
//!
//! Each non-blank line is `<keyword> <positional>... key=value...`. Text after
//! `#` is a comment. Every key must be consumed by the reader; leftovers are
//! reported as errors so typos never silently fall back to defaults.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Record {
    pub line: usize,
    pub keyword: String,
    pub positional: Vec<String>,
    fields: BTreeMap<String, String>,
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let mut tokens = content.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        let mut positional = Vec::new();
        let mut fields = BTreeMap::new();
        for tok in tokens {
            match tok.split_once('=') {
                Some((k, v)) => {
                    if k.is_empty() || v.is_empty() {
                        return Err(Error::parse(line, format!("malformed field `{tok}`")));
                    }
                    if fields.insert(k.to_string(), v.to_string()).is_some() {
                        return Err(Error::parse(line, format!("duplicate key `{k}`")));
                    }
                }
                None => {
                    if !fields.is_empty() {
                        return Err(Error::parse(
                            line,
                            format!("positional token `{tok}` after key=value fields"),
                        ));
                    }
                    positional.push(tok.to_string());
                }
            }
        }
        out.push(Record {
            line,
            keyword: keyword.to_string(),
            positional,
            fields,
        });
    }
    Ok(out)
}

impl Record {
    pub fn positional(&self, idx: usize, what: &str) -> Result<&str> {
        self.positional
            .get(idx)
            .map(String::as_str)
            .ok_or_else(|| Error::parse(self.line, format!("missing {what}")))
    }

    pub fn expect_positional(&self, n: usize) -> Result<()> {
        if self.positional.len() != n {
            return Err(Error::parse(
                self.line,
                format!(
                    "`{}` expects {n} positional argument(s), got {}",
                    self.keyword,
                    self.positional.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.fields.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::parse(self.line, format!("invalid value `{v}` for `{key}`"))),
        }
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::parse(self.line, format!("missing required key `{key}`")))
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.fields.remove(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| {
                item.parse::<T>().map_err(|_| {
                    Error::parse(self.line, format!("invalid list item `{item}` for `{key}`"))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Remaining (unconsumed) fields in key order.
    pub fn drain(&mut self) -> Vec<(String, String)> {
        std::mem::take(&mut self.fields).into_iter().collect()
    }

    pub fn finish(&self) -> Result<()> {
        if let Some(k) = self.fields.keys().next() {
            return Err(Error::parse(
                self.line,
                format!("unknown key `{k}` for `{}`", self.keyword),
            ));
        }
        Ok(())
    }
}
