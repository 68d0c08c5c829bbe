//! Versioning and shape checks for every persisted JSON artifact.

use serde_json::{Map, Value};

/// Version stamped into captions, traces, reports and manifests.
pub const SCHEMA_VERSION: &str = "1.0";

/// Type skeleton of a JSON value: objects keep their keys, arrays are reduced
/// to the shape of their first element, and scalars become the names
/// `"string"`, `"number"`, `"boolean"` or `"null"`.
pub fn shape_of(value: &Value) -> Value {
    match value {
        Value::Null => Value::String("null".into()),
        Value::Bool(_) => Value::String("boolean".into()),
        Value::Number(_) => Value::String("number".into()),
        Value::String(_) => Value::String("string".into()),
        Value::Array(items) => Value::Array(items.first().map(shape_of).into_iter().collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), shape_of(v))).collect::<Map<_, _>>()),
    }
}

/// Paths where `actual` deviates from the `expected` skeleton. An empty
/// expected array accepts any array; a `"null"` slot in `expected` accepts
/// any value or no key at all (optional values).
pub fn shape_mismatches(expected: &Value, actual: &Value) -> Vec<String> {
    let mut out = Vec::new();
    compare(expected, &shape_of(actual), "$", &mut out);
    out
}

fn compare(expected: &Value, actual: &Value, path: &str, out: &mut Vec<String>) {
    match (expected, actual) {
        (Value::String(e), _) if e == "null" => {}
        (Value::String(e), Value::String(a)) if e == a => {}
        (Value::Array(e), Value::Array(a)) => {
            if let (Some(e), Some(a)) = (e.first(), a.first()) {
                compare(e, a, &format!("{path}[]"), out);
            }
        }
        (Value::Object(e), Value::Object(a)) => {
            for (k, ev) in e {
                match a.get(k) {
                    Some(av) => compare(ev, av, &format!("{path}.{k}"), out),
                    None if ev == "null" => {}
                    None => out.push(format!("{path}.{k}: missing")),
                }
            }
            for k in a.keys().filter(|k| !e.contains_key(*k)) {
                out.push(format!("{path}.{k}: unexpected"));
            }
        }
        _ => out.push(format!("{path}: expected {expected}, found {actual}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn skeletons() {
        let v = json!({"a": 1, "b": ["x", "y"], "c": {"d": null, "e": true}});
        assert_eq!(shape_of(&v), json!({"a": "number", "b": ["string"], "c": {"d": "null", "e": "boolean"}}));
    }

    #[test]
    fn mismatches_are_reported_by_path() {
        let expected = json!({"a": "number", "b": ["string"], "opt": "null"});
        assert!(shape_mismatches(&expected, &json!({"a": 2, "b": [], "opt": 3})).is_empty());
        assert!(shape_mismatches(&expected, &json!({"a": 2, "b": []})).is_empty());
        let errs = shape_mismatches(&expected, &json!({"a": "2", "b": [1], "opt": null, "z": 0}));
        assert_eq!(errs, vec!["$.a: expected \"number\", found \"string\"", "$.b[]: expected \"string\", found \"number\"", "$.z: unexpected"]);
    }
}
