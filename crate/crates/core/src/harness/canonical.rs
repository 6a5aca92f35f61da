//! Canonical JSON: sorted object keys, integers as integers, floats in
//! 17-significant-digit scientific form, no insignificant whitespace.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{HarnessError, Result};

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| HarnessError::Format(e.to_string()))?;
    let mut out = String::new();
    write_value(&v, &mut out)?;
    Ok(out)
}

/// Canonical JSON followed by a single LF.
pub fn to_canonical_line<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = to_canonical_string(value)?;
    s.push('\n');
    Ok(s)
}

pub fn format_f64(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(HarnessError::NonFinite);
    }
    Ok(format!("{x:.16e}"))
}

fn write_value(v: &Value, out: &mut String) -> Result<()> {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                out.push_str(&format_f64(n.as_f64().ok_or(HarnessError::NonFinite)?)?);
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_value(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (k, key) in keys.into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                out.push(':');
                write_value(&map[key], out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

/// Parses JSON, reporting line and column on failure.
pub fn parse<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| HarnessError::Parse {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_keys_and_formats_numbers() {
        let v = json!({"b": 1, "a": [0.1, -2, 1e300, -0.0], "c": {"y": true, "x": null}});
        assert_eq!(
            to_canonical_string(&v).unwrap(),
            r#"{"a":[1.0000000000000001e-1,-2,1.0000000000000001e300,-0.0000000000000000e0],"b":1,"c":{"x":null,"y":true}}"#
        );
    }

    #[test]
    fn floats_round_trip_bitwise() {
        for x in [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 5e-324, -1.7976931348623157e308, 123456.789] {
            let s = format_f64(x).unwrap();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert!(matches!(format_f64(f64::NAN), Err(HarnessError::NonFinite)));
    }

    #[test]
    fn reserialization_is_byte_identical() {
        let v = json!({"w": [[0.25, 1e-9], [3.0, -7.5]], "name": "x\"y"});
        let s = to_canonical_string(&v).unwrap();
        let back: Value = parse(&s, "test").unwrap();
        assert_eq!(to_canonical_string(&back).unwrap(), s);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse::<Value>("{\n  \"a\": ,\n}", "cfg").unwrap_err();
        match err {
            HarnessError::Parse { line, column, .. } => assert_eq!((line, column), (2, 8)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
