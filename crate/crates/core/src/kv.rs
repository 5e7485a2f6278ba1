//! Plain `key = value` configuration files.
//!
//! One pair per line; blank lines and lines starting with `#` are ignored.
//! Keys are case-sensitive. A repeated key keeps its last value.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{ApanError, Result};

/// Parsed pairs in key order.
pub type KvMap = BTreeMap<String, String>;

pub fn parse_kv(text: &str) -> Result<KvMap> {
    let mut out = KvMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ApanError::Config {
                key: line.to_string(),
                message: format!("line {} is not `key = value`", k + 1),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(ApanError::Config {
                key: String::new(),
                message: format!("line {} has an empty key", k + 1),
            });
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Parses `value` for `key`, naming the key on failure.
pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ApanError::Config {
        key: key.to_string(),
        message: format!("cannot parse `{value}`: {e}"),
    })
}

/// Renders pairs in the order given.
pub fn write_kv<'a, I>(pairs: I) -> String
where
    I: IntoIterator<Item = (&'a str, String)>,
{
    pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
