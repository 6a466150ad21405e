//! JSON config files. Every key not understood is reported at once.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Dotted paths of keys in `given` that do not occur in `known`.
pub fn unknown_keys(given: &Value, known: &Value) -> Vec<String> {
    let mut out = Vec::new();
    collect(given, known, "", &mut out);
    out
}

fn collect(given: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(g), Value::Object(k)) = (given, known) else {
        return;
    };
    for (key, value) in g {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match k.get(key) {
            None => out.push(path),
            Some(sub) => collect(value, sub, &path, out),
        }
    }
}

/// Parses `text` as a `T`, first listing every unknown key. Missing keys
/// take their defaults.
pub fn parse_config<T>(text: &str, origin: &str) -> Result<T, CliError>
where
    T: DeserializeOwned + Serialize + Default,
{
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    if !value.is_object() {
        return Err(CliError::Config(format!("{origin}: expected a JSON object")));
    }
    let known = serde_json::to_value(T::default()).expect("defaults serialize");
    let unknown = unknown_keys(&value, &known);
    if !unknown.is_empty() {
        return Err(CliError::Config(format!("{origin}: unknown keys: {}", unknown.join(", "))));
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

pub fn load_config<T>(path: &Path) -> Result<T, CliError>
where
    T: DeserializeOwned + Serialize + Default,
{
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}
