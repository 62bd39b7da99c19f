//! Canonical byte serialization.
//!
//! Every hash and every byte-identity check in the engine is computed over the
//! output of this module. The encoding is JSON with:
//!
//! - object keys sorted by Unicode code point (equivalently, by UTF-8 bytes)
//! - no insignificant whitespace
//! - UTF-8 strings, escaping only `"`, `\` and control characters
//! - integers in plain decimal without leading zeros
//! - finite floats in shortest round-trip form (`0.1`, `1.0`, `1e-7`)
//!
//! Sorting is done here rather than relying on `serde_json::Map` ordering, so
//! the output does not depend on which `serde_json` features are unified into
//! the build.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value as Json;

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("value is not representable in canonical form: {0}")]
    Unrepresentable(String),
    #[error("malformed canonical input: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Serialize `value` to canonical bytes.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let json = serde_json::to_value(value)
        .map_err(|e| CanonicalError::Unrepresentable(e.to_string()))?;
    let mut out = Vec::with_capacity(256);
    write_json(&json, &mut out);
    Ok(out)
}

/// Canonical bytes of an already-built JSON tree.
pub fn json_to_canonical_bytes(json: &Json) -> Vec<u8> {
    let mut out = Vec::with_capacity(256);
    write_json(json, &mut out);
    out
}

pub fn from_canonical_bytes<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    Ok(serde_json::from_slice(bytes)?)
}

fn write_json(json: &Json, out: &mut Vec<u8>) {
    match json {
        Json::Null => out.extend_from_slice(b"null"),
        Json::Bool(true) => out.extend_from_slice(b"true"),
        Json::Bool(false) => out.extend_from_slice(b"false"),
        Json::Number(n) => out.extend_from_slice(n.to_string().as_bytes()),
        Json::String(s) => write_string(s, out),
        Json::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_json(item, out);
            }
            out.push(b']');
        }
        Json::Object(map) => {
            let mut entries: Vec<(&String, &Json)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, value)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_json(value, out);
            }
            out.push(b'}');
        }
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // serde_json's string escaping is already minimal and stable.
    let encoded = serde_json::to_string(s).expect("string serialization is infallible");
    out.extend_from_slice(encoded.as_bytes());
}
