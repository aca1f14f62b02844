use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// The `--config` file: each section overrides the matching defaults key by
/// key, and flags given on the command line override both.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<Value>,
    pub model: Option<Value>,
    pub train: Option<Value>,
    pub service: Option<Value>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// `defaults` with the fields present in `patch` replaced.
pub fn overlay<T: Serialize + DeserializeOwned>(defaults: T, patch: Option<&Value>, section: &str) -> Result<T> {
    let Some(patch) = patch else {
        return Ok(defaults);
    };
    let mut value = serde_json::to_value(defaults)?;
    merge(&mut value, patch);
    serde_json::from_value(value).with_context(|| format!("config section \"{section}\""))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Inner {
        a: u32,
        b: Vec<u8>,
        nested: Nested,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Nested {
        x: f64,
        y: bool,
    }

    #[test]
    fn overlay_replaces_only_given_keys() {
        let base = Inner { a: 1, b: vec![1, 2], nested: Nested { x: 0.5, y: true } };
        let patch = serde_json::json!({"a": 7, "nested": {"y": false}});
        let out = overlay(base, Some(&patch), "t").unwrap();
        assert_eq!(out, Inner { a: 7, b: vec![1, 2], nested: Nested { x: 0.5, y: false } });
    }

    #[test]
    fn overlay_rejects_wrong_types() {
        let base = Nested { x: 0.5, y: true };
        assert!(overlay(base, Some(&serde_json::json!({"x": "fast"})), "t").is_err());
    }
}
