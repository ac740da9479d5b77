// SPDX-License-Identifier: Apache-2.0

//! Bundled JSON schema for reports and a checker for the subset of JSON
//! Schema it uses (`type`, `required`, `properties`, `additionalProperties`,
//! `items`, `enum`, `minimum`, `pattern` for the two hex forms, and local
//! `$ref`s).

use serde_json::Value;
use thiserror::Error;

/// The report schema, draft-07.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{path}: {msg}")]
pub struct SchemaError {
    /// JSON pointer of the offending value.
    pub path: String,
    pub msg: String,
}

/// Check `doc` against [`REPORT_SCHEMA`].
pub fn validate_report(doc: &Value) -> Result<(), SchemaError> {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).expect("bundled schema is valid JSON");
    check(&schema, &schema, doc, "")
}

fn fail(path: &str, msg: impl Into<String>) -> Result<(), SchemaError> {
    Err(SchemaError {
        path: if path.is_empty() { "/".into() } else { path.into() },
        msg: msg.into(),
    })
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        "null" => v.is_null(),
        _ => false,
    }
}

fn is_hex(s: &str) -> bool {
    s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn pattern_matches(pattern: &str, s: &str) -> Option<bool> {
    match pattern {
        "^([0-9a-f]{2})*$" => Some(s.len().is_multiple_of(2) && is_hex(s)),
        "^0x[0-9a-f]+$" => Some(s.strip_prefix("0x").is_some_and(|h| !h.is_empty() && is_hex(h))),
        _ => None,
    }
}

fn resolve<'a>(root: &'a Value, reference: &str) -> Option<&'a Value> {
    root.pointer(reference.strip_prefix('#')?)
}

fn check(root: &Value, schema: &Value, v: &Value, path: &str) -> Result<(), SchemaError> {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let target = resolve(root, r).ok_or_else(|| SchemaError {
            path: path.into(),
            msg: format!("unresolvable reference {r}"),
        })?;
        return check(root, target, v, path);
    }
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        if !type_matches(t, v) {
            return fail(path, format!("expected {t}"));
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(v) {
            return fail(path, format!("{v} is not one of {options:?}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            return fail(path, format!("{x} is below the minimum {min}"));
        }
    }
    if let (Some(p), Some(s)) = (schema.get("pattern").and_then(Value::as_str), v.as_str()) {
        match pattern_matches(p, s) {
            Some(true) => {}
            Some(false) => return fail(path, format!("'{s}' does not match {p}")),
            None => return fail(path, format!("unsupported pattern {p}")),
        }
    }
    if let Some(obj) = v.as_object() {
        if let Some(req) = schema.get("required").and_then(Value::as_array) {
            for r in req.iter().filter_map(Value::as_str) {
                if !obj.contains_key(r) {
                    return fail(path, format!("missing required field '{r}'"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, child) in obj {
            let sub = format!("{path}/{k}");
            match props.and_then(|p| p.get(k)) {
                Some(s) => check(root, s, child, &sub)?,
                None => match schema.get("additionalProperties") {
                    Some(Value::Bool(false)) => return fail(&sub, "unexpected field"),
                    Some(s @ Value::Object(_)) => check(root, s, child, &sub)?,
                    _ => {}
                },
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), v.as_array()) {
        for (i, child) in arr.iter().enumerate() {
            check(root, items, child, &format!("{path}/{i}"))?;
        }
    }
    Ok(())
}
