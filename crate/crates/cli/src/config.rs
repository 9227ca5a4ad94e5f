//! TOML configuration layered under command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::{usage, CliError};

pub fn load(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    serde_json::to_value(table).map_err(|e| usage(e.to_string()))
}

/// Flattens the file for one subcommand: top-level keys, then the
/// subcommand's own table.
fn section(file: &Value, command: &str) -> Map<String, Value> {
    let mut out = Map::new();
    let Some(obj) = file.as_object() else {
        return out;
    };
    for (k, v) in obj {
        if !v.is_object() {
            out.insert(normalize_key(k), normalize_value(v));
        }
    }
    if let Some(Value::Object(sub)) = obj.get(command) {
        for (k, v) in sub {
            out.insert(normalize_key(k), normalize_value(v));
        }
    }
    out
}

fn normalize_key(k: &str) -> String {
    k.replace('-', "_")
}

/// Arrays become the comma lists the flags use.
fn normalize_value(v: &Value) -> Value {
    match v {
        Value::Array(items) => Value::String(
            items
                .iter()
                .map(|x| match x {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
        ),
        other => other.clone(),
    }
}

/// Fills every unset flag of `args` from the config file.
pub fn merge(args: Value, file: &Value, command: &str) -> Value {
    let Value::Object(mut flags) = args else {
        return args;
    };
    for (k, v) in section(file, command) {
        match flags.get(&k) {
            Some(Value::Null) | Some(Value::Bool(false)) => {
                flags.insert(k, v);
            }
            _ => {}
        }
    }
    Value::Object(flags)
}

/// Accepts a comma list given either as a string or as a single number.
pub fn list<'de, D>(d: D) -> Result<Option<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::Deserialize;
    match Value::deserialize(d)? {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s)),
        Value::Number(n) => Ok(Some(n.to_string())),
        other => Err(serde::de::Error::custom(format!(
            "expected a list, got {other}"
        ))),
    }
}

pub fn from_value<T: DeserializeOwned>(v: Value) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| usage(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_win_and_sections_override() {
        let file: Value = serde_json::to_value(
            toml::from_str::<toml::Table>(
                "t_final = 2.0\nsteps = 8\n[sweep]\nsteps = 16\neps = [1, 0.1]\n",
            )
            .unwrap(),
        )
        .unwrap();
        let args = json!({"t_final": 0.5, "steps": null, "eps": null, "seed": null});
        let merged = merge(args, &file, "sweep");
        assert_eq!(merged["t_final"], json!(0.5));
        assert_eq!(merged["steps"], json!(16));
        assert_eq!(merged["eps"], json!("1,0.1"));
        assert_eq!(merged["seed"], Value::Null);
    }
}
