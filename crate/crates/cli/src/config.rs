use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Missing or malformed command-line input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn overlay(base: &mut Map<String, Value>, top: Map<String, Value>, source: &str) -> Result<()> {
    for (k, v) in top {
        if !base.contains_key(&k) {
            return Err(UsageError(format!("unknown key `{k}` in {source}")).into());
        }
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    Ok(())
}

/// Effective parameters: flags over the config file over defaults.
/// A config file may hold one object per command under the command's name,
/// or a flat object.
pub fn resolve<P, F>(command: &str, config: Option<&Path>, flags: &F) -> Result<(P, Value)>
where
    P: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let Value::Object(mut merged) = serde_json::to_value(P::default())? else {
        unreachable!("parameter sets serialize to objects")
    };
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(mut obj) = value else {
            return Err(UsageError(format!("config {} must be a JSON object", path.display())).into());
        };
        let section = match obj.remove(command) {
            Some(Value::Object(o)) => o,
            Some(_) => return Err(UsageError(format!("config section `{command}` must be an object")).into()),
            None => obj,
        };
        overlay(&mut merged, section, "config")?;
    }
    if let Value::Object(f) = serde_json::to_value(flags)? {
        overlay(&mut merged, f, "flags")?;
    }
    let value = Value::Object(merged);
    let params = serde_json::from_value(value.clone()).map_err(|e| UsageError(format!("bad parameter: {e}")))?;
    Ok((params, value))
}

pub fn required<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| UsageError(format!("missing required parameter --{name}")).into())
}
