use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::federation::{DatasetConfig, SimConfig};

fn at(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.into(),
        message: message.into(),
    }
}

/// Sets `key=value` in a JSON document, where `key` is a dot path
/// (`attack.alpha=0.7`). The value is parsed as JSON when possible and taken
/// as a bare string otherwise; missing or non-object intermediates become
/// objects.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::invalid(format!(
            "override key {key:?} has an empty segment"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .expect("just made an object")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    node.as_object_mut()
        .expect("just made an object")
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape(variant))),
            Segment::Unknown => {}
        }
    }
    out
}

/// Deserializes and validates a config document. Schema errors carry the
/// JSON pointer of the offending field.
pub fn config_from_value(doc: Value) -> Result<SimConfig> {
    let config: SimConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let pointer = pointer_of(e.path());
        at(pointer, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Reads a JSON config, applies dot-path overrides, fills defaults and
/// validates. Relative file paths inside the config are taken relative to
/// the config file's directory.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| at("", format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let mut config = config_from_value(doc)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let DatasetConfig::Idx {
        train_images,
        train_labels,
        test_images,
        test_labels,
    } = &mut config.dataset
    {
        for p in [train_images, train_labels, test_images, test_labels] {
            resolve(base, p);
        }
    }
    if let Some(p) = &mut config.pretrained {
        resolve(base, p);
    }
    Ok(config)
}
