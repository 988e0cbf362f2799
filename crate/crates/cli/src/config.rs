//! `--config` files: a JSON object whose keys are flag names.

use std::path::Path;

use serde_json::Value;

/// Keys that describe the file rather than a flag.
const IGNORED: &[&str] = &["subcommand", "version"];

/// Reads `path` and renders its fields as `--flag value` pairs.
pub fn flags_from_file(path: &Path, subcommand: &str) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let value: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    flags_from_value(&value, subcommand)
}

pub fn flags_from_value(value: &Value, subcommand: &str) -> Result<Vec<String>, String> {
    let Value::Object(map) = value else {
        return Err("expected a JSON object".into());
    };
    if let Some(s) = map.get("subcommand") {
        if s.as_str() != Some(subcommand) {
            return Err(format!("written for subcommand {s}, not {subcommand:?}"));
        }
    }
    let mut out = Vec::new();
    for (k, v) in map {
        if IGNORED.contains(&k.as_str()) || v.is_null() {
            continue;
        }
        out.push(format!("--{}", k.replace('_', "-")));
        out.push(render(v).ok_or_else(|| format!("field {k:?} has an unsupported value {v}"))?);
    }
    Ok(out)
}

/// Scalars as text, flat arrays joined by `,`, arrays of arrays by `;`.
fn render(v: &Value) -> Option<String> {
    match v {
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => {
            if items.iter().all(|i| i.is_array()) {
                items.iter().map(render).collect::<Option<Vec<_>>>().map(|v| v.join(";"))
            } else if items.iter().all(|i| !i.is_array() && !i.is_object()) {
                items.iter().map(render).collect::<Option<Vec<_>>>().map(|v| v.join(","))
            } else {
                None
            }
        }
        Value::Null | Value::Object(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn renders_lists_and_nested_states() {
        let flags = flags_from_value(
            &json!({"subcommand": "drift", "states": [[0,0,0,5],[0,0,0,10]], "t_mult": null, "p": 1}),
            "drift",
        )
        .unwrap();
        assert_eq!(flags, ["--p", "1", "--states", "0,0,0,5;0,0,0,10"]);
    }

    #[test]
    fn rejects_other_subcommand() {
        assert!(flags_from_value(&json!({"subcommand": "holds"}), "drift").is_err());
    }

    #[test]
    fn floats_keep_full_precision() {
        let flags = flags_from_value(&json!({"delta": 0.1}), "params").unwrap();
        assert_eq!(flags[1].parse::<f64>().unwrap(), 0.1);
    }
}
