use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use vsr_core::{Result, VsrError};

/// Parses `key=value`; the value is read as JSON and falls back to a plain
/// string.
pub fn parse_assignment(raw: &str) -> Result<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| VsrError::Config(format!("--set expects key=value, got {raw:?}")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(VsrError::Config(format!("--set has an empty key in {raw:?}")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.to_string(), value))
}

/// Replaces the value at dotted path `key`. Every segment must already exist,
/// so typos are reported rather than silently ignored.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| VsrError::Config(format!("config key {key}: {} is not an object", parts[..i].join("."))))?;
        let child = obj
            .get_mut(*part)
            .ok_or_else(|| VsrError::Config(format!("unknown config key {key}")))?;
        if i + 1 == parts.len() {
            *child = value;
            return Ok(());
        }
        node = child;
    }
    unreachable!("split yields at least one segment")
}

/// Normalises `base` through `T` (filling defaults), applies the overrides
/// and deserialises the result.
pub fn resolve<T: Serialize + DeserializeOwned>(base: Value, sets: &[String]) -> Result<T> {
    let typed: T = serde_json::from_value(base).map_err(|e| VsrError::Config(format!("invalid config: {e}")))?;
    let mut full = serde_json::to_value(&typed).map_err(|e| VsrError::Config(e.to_string()))?;
    for raw in sets {
        let (k, v) = parse_assignment(raw)?;
        set_path(&mut full, &k, v)?;
    }
    serde_json::from_value(full).map_err(|e| VsrError::Config(format!("invalid config after overrides: {e}")))
}
