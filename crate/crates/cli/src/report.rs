//! Report assembly and rendering.
//!
//! A report is a JSON object `{command, seed, config, result}`. It contains no
//! timestamps or host details, so identical inputs give identical bytes.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub struct Report {
    pub command: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub result: Value,
}

impl Report {
    pub fn new(command: &'static str, seed: Option<u64>, config: impl Serialize, result: impl Serialize) -> Result<Self> {
        Ok(Self {
            command,
            seed,
            config: serde_json::to_value(config)?,
            result: serde_json::to_value(result)?,
        })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "result": self.result,
        })
    }

    pub fn to_string_pretty(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_json())?;
        s.push('\n');
        Ok(s)
    }

    /// Writes JSON to `path` when given. Stdout gets the table under
    /// `pretty`, otherwise the JSON (unless it already went to a file).
    pub fn emit(&self, path: Option<&Path>, pretty: bool) -> Result<()> {
        let text = self.to_string_pretty()?;
        if let Some(p) = path {
            std::fs::write(p, &text).with_context(|| format!("writing report {}", p.display()))?;
        }
        let mut out = std::io::stdout().lock();
        if pretty {
            out.write_all(render_table(&self.to_json()).as_bytes())?;
        } else if path.is_none() {
            out.write_all(text.as_bytes())?;
        }
        Ok(())
    }
}

/// Flattens a JSON value into aligned `key  value` rows. Arrays of scalars
/// stay on one line; arrays of objects are indexed.
pub fn render_table(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten("", v, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {v}\n"))
        .collect()
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten(&join(k), child, rows);
            }
        }
        Value::Array(items) if items.iter().any(|x| x.is_object() || x.is_array()) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), child, rows);
            }
        }
        Value::Array(items) => {
            let cells: Vec<String> = items.iter().map(scalar).collect();
            rows.push((prefix.to_string(), format!("[{}]", cells.join(", "))));
        }
        other => rows.push((prefix.to_string(), scalar(other))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Machine-readable kind for an error chain, taken from the innermost library
/// error when there is one.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    use qualkit::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::OutOfRange { .. } => "out_of_range",
                E::InvalidInput(_) => "invalid_input",
                E::Parse { .. } => "parse",
                E::DuplicateId(_) => "duplicate_id",
                E::MissingId(_) => "missing_id",
                E::Undefined(_) => "undefined",
                E::Numerical(_) => "numerical",
                E::Diverged { .. } => "diverged",
                E::Io(_) => "io",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return "config";
        }
    }
    "error"
}

pub fn error_json(err: &anyhow::Error) -> String {
    let causes: Vec<String> = err.chain().map(|c| c.to_string()).collect();
    json!({ "error": { "kind": error_kind(err), "message": format!("{err:#}"), "causes": causes } }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_flattens_nested_values() {
        let v = json!({"a": {"b": 1.5, "c": [1, 2]}, "d": [{"e": null}], "f": "x"});
        let t = render_table(&v);
        assert!(t.contains("a.b     1.5\n"), "{t}");
        assert!(t.contains("a.c     [1, 2]\n"), "{t}");
        assert!(t.contains("d[0].e  -\n"), "{t}");
        assert!(t.contains("f       x\n"), "{t}");
    }

    #[test]
    fn library_error_kind_survives_context() {
        let e = anyhow::Error::from(qualkit::Error::MissingId("x".into())).context("eval");
        assert_eq!(error_kind(&e), "missing_id");
        assert!(error_json(&e).contains("`x`"));
    }
}
