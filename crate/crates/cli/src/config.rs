//! Scenario loading: a JSON file or a named preset, then `path=value`
//! overrides, then validation.

use std::fs;
use std::path::Path;

use cats_core::scenario::ScenarioError;
use cats_core::ScenarioConfig;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown preset {0:?} (available: {list})", list = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("bad override {0:?}: {1}")]
    Override(String, String),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ScenarioError),
    #[error("give either a config file or a preset, not both")]
    Ambiguous,
}

pub const PRESETS: [&str; 3] = ["replication", "replication-nocam", "replication-fullcam"];

/// The named preset. The replication presets differ only in camera coverage.
pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    match name {
        "replication" => Ok(ScenarioConfig::replication(0.3)),
        "replication-nocam" => Ok(ScenarioConfig::replication(0.0)),
        "replication-fullcam" => Ok(ScenarioConfig::replication(1.0)),
        _ => Err(ConfigError::UnknownPreset(name.to_string())),
    }
}

/// Sets the value at a dotted path, e.g. `population.total=10` or
/// `rates.uncovered.2=0.3`. The value is parsed as JSON and taken as a
/// plain string if that fails.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let bad = |why: &str| ConfigError::Override(assignment.to_string(), why.to_string());
    let (path, raw) = assignment.split_once('=').ok_or_else(|| bad("expected path=value"))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(bad("empty path"));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (depth, key) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let i: usize = key.parse().map_err(|_| bad(&format!("{key:?} is not an array index")))?;
                let len = items.len();
                let slot = items.get_mut(i).ok_or_else(|| bad(&format!("index {i} out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad(&format!("{key:?} is below a scalar"))),
        };
    }
    unreachable!("the last key returns")
}

/// Resolves the scenario from a file or preset plus overrides and validates
/// it. Nothing is simulated or written here.
pub fn load(file: Option<&Path>, preset_name: Option<&str>, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    let mut root = match (file, preset_name) {
        (Some(_), Some(_)) => return Err(ConfigError::Ambiguous),
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
            serde_json::from_str(&text)?
        }
        (None, name) => serde_json::to_value(preset(name.unwrap_or("replication"))?)?,
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let config: ScenarioConfig = serde_json::from_value(root)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_and_indexed_overrides() {
        let mut v = json!({"a": {"b": 1, "c": [1, 2, 3]}});
        apply_override(&mut v, "a.b=10").unwrap();
        apply_override(&mut v, "a.c.1=0.5").unwrap();
        apply_override(&mut v, "a.d=hello").unwrap();
        assert_eq!(v, json!({"a": {"b": 10, "c": [1, 0.5, 3], "d": "hello"}}));
    }

    #[test]
    fn override_errors() {
        let mut v = json!({"a": [1], "s": 2});
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "a.5=1").is_err());
        assert!(apply_override(&mut v, "a.x=1").is_err());
        assert!(apply_override(&mut v, "s.t=1").is_err());
    }

    #[test]
    fn preset_with_override() {
        let c = load(None, Some("replication"), &["population.total=10".into()]).unwrap();
        assert_eq!(c.population.total, 10);
        assert_eq!(preset("replication-fullcam").unwrap().network.camera_coverage, 1.0);
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(matches!(load(None, None, &["populaton.total=10".into()]), Err(ConfigError::Json(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let e = load(None, None, &["population.fractions.normal=0.9".into()]);
        assert!(matches!(e, Err(ConfigError::Invalid(_))), "{e:?}");
    }
}
