//! Operator parameters and their canonical byte encoding.
//!
//! The canonical form is compact JSON with object keys sorted bytewise at
//! every nesting level and floats rendered in shortest round-trip form.
//! Nulls and non-finite floats have no canonical form and are rejected.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::WorkflowError;

/// Insertion-ordered parameter map. Order never affects the canonical bytes.
pub type Params = IndexMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ParamValue>),
    Map(Params),
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Str(s.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(s: String) -> Self {
        ParamValue::Str(s)
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Float(v)
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

impl ParamValue {
    /// Convert a parsed JSON value, rejecting nulls and out-of-range numbers.
    pub fn from_json(path: &str, value: &serde_json::Value) -> Result<Self, WorkflowError> {
        use serde_json::Value;
        let unsupported = |what: &str| WorkflowError::UnsupportedValue {
            path: path.to_string(),
            reason: what.to_string(),
        };
        Ok(match value {
            Value::Null => return Err(unsupported("null")),
            Value::Bool(b) => ParamValue::Bool(*b),
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    ParamValue::Int(i)
                } else if n.is_u64() {
                    return Err(unsupported("integer exceeds i64"));
                } else {
                    ParamValue::Float(n.as_f64().ok_or_else(|| unsupported("number"))?)
                }
            }
            Value::String(s) => ParamValue::Str(s.clone()),
            Value::Array(items) => ParamValue::List(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, v)| Self::from_json(&format!("{path}[{i}]"), v))
                    .collect::<Result<_, _>>()?,
            ),
            Value::Object(map) => ParamValue::Map(params_from_json(path, map)?),
        })
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

pub fn params_from_json(
    path: &str,
    map: &serde_json::Map<String, serde_json::Value>,
) -> Result<Params, WorkflowError> {
    map.iter()
        .map(|(k, v)| {
            let child = if path.is_empty() {
                k.clone()
            } else {
                format!("{path}.{k}")
            };
            Ok((k.clone(), ParamValue::from_json(&child, v)?))
        })
        .collect()
}

/// Canonical bytes of a parameter map.
pub fn canonicalize_params(params: &Params) -> Result<Vec<u8>, WorkflowError> {
    let mut out = Vec::with_capacity(64);
    write_map(&mut out, params, "")?;
    Ok(out)
}

fn write_map(out: &mut Vec<u8>, map: &Params, path: &str) -> Result<(), WorkflowError> {
    let mut keys: Vec<&String> = map.keys().collect();
    keys.sort_unstable_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
    out.push(b'{');
    for (i, key) in keys.into_iter().enumerate() {
        if i > 0 {
            out.push(b',');
        }
        write_str(out, key);
        out.push(b':');
        let child = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        write_value(out, &map[key], &child)?;
    }
    out.push(b'}');
    Ok(())
}

fn write_value(out: &mut Vec<u8>, value: &ParamValue, path: &str) -> Result<(), WorkflowError> {
    match value {
        ParamValue::Bool(true) => out.extend_from_slice(b"true"),
        ParamValue::Bool(false) => out.extend_from_slice(b"false"),
        ParamValue::Int(i) => out.extend_from_slice(i.to_string().as_bytes()),
        ParamValue::Float(f) => {
            if !f.is_finite() {
                return Err(WorkflowError::UnsupportedValue {
                    path: path.to_string(),
                    reason: format!("non-finite float {f}"),
                });
            }
            let mut buf = ryu::Buffer::new();
            out.extend_from_slice(buf.format_finite(*f).as_bytes());
        }
        ParamValue::Str(s) => write_str(out, s),
        ParamValue::List(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(out, item, &format!("{path}[{i}]"))?;
            }
            out.push(b']');
        }
        ParamValue::Map(map) => write_map(out, map, path)?,
    }
    Ok(())
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    out.push(b'"');
    for ch in s.chars() {
        match ch {
            '"' => out.extend_from_slice(b"\\\""),
            '\\' => out.extend_from_slice(b"\\\\"),
            '\n' => out.extend_from_slice(b"\\n"),
            '\r' => out.extend_from_slice(b"\\r"),
            '\t' => out.extend_from_slice(b"\\t"),
            '\u{08}' => out.extend_from_slice(b"\\b"),
            '\u{0c}' => out.extend_from_slice(b"\\f"),
            c if (c as u32) < 0x20 => {
                let b = c as u8;
                out.extend_from_slice(b"\\u00");
                out.push(HEX[(b >> 4) as usize]);
                out.push(HEX[(b & 0xf) as usize]);
            }
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    out.push(b'"');
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(pairs: &[(&str, ParamValue)]) -> Params {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn empty_map_is_two_bytes() {
        assert_eq!(canonicalize_params(&Params::new()).unwrap(), b"{}");
    }

    #[test]
    fn key_order_does_not_matter() {
        let a = p(&[("lr", 0.001.into()), ("epochs", 3i64.into())]);
        let b = p(&[("epochs", 3i64.into()), ("lr", 0.001.into())]);
        let ca = canonicalize_params(&a).unwrap();
        assert_eq!(ca, canonicalize_params(&b).unwrap());
        assert_eq!(ca, br#"{"epochs":3,"lr":0.001}"#);
    }

    #[test]
    fn ints_and_integral_floats_differ() {
        let a = p(&[("x", 3i64.into())]);
        let b = p(&[("x", 3.0.into())]);
        assert_ne!(canonicalize_params(&a).unwrap(), canonicalize_params(&b).unwrap());
    }

    #[test]
    fn non_finite_rejected() {
        let a = p(&[("x", f64::NAN.into())]);
        assert!(matches!(
            canonicalize_params(&a),
            Err(WorkflowError::UnsupportedValue { .. })
        ));
        let nested = p(&[("m", ParamValue::Map(p(&[("inf", f64::INFINITY.into())])))]);
        let err = canonicalize_params(&nested).unwrap_err();
        assert!(err.to_string().contains("m.inf"), "{err}");
    }

    #[test]
    fn null_json_rejected() {
        let v: serde_json::Value = serde_json::json!({"a": {"b": null}});
        let err = params_from_json("", v.as_object().unwrap()).unwrap_err();
        assert!(matches!(err, WorkflowError::UnsupportedValue { .. }));
    }

    #[test]
    fn strings_are_escaped() {
        let a = p(&[("s", "a\"b\\c\n\u{1}".into())]);
        assert_eq!(
            canonicalize_params(&a).unwrap(),
            br#"{"s":"a\"b\\c\n\u0001"}"#
        );
    }
}
