//! Report plumbing for the `blforge` binary: canonical input digests and the
//! run report written to stdout.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};

/// Recursively sorts object keys and rewrites every number as an `f64`, so
/// `2`, `2.0` and `2e0` serialize identically.
pub fn canonicalize(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<&String, Value> = m.iter().map(|(k, v)| (k, canonicalize(v))).collect();
            let mut out = Map::new();
            for (k, v) in sorted {
                out.insert(k.clone(), v);
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(canonicalize).collect()),
        Value::Number(n) => n
            .as_f64()
            .and_then(Number::from_f64)
            .map(Value::Number)
            .unwrap_or_else(|| Value::Number(n.clone())),
        other => other.clone(),
    }
}

/// Compact canonical text of a JSON value.
pub fn canonical_string(v: &Value) -> String {
    // Map iteration is key-ordered after canonicalize, whatever serde_json's
    // map backend is.
    let mut out = String::new();
    write_canonical(&canonicalize(v), &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&m[k], out);
            }
            out.push('}');
        }
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(x, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

pub fn digest_value(v: &Value) -> String {
    hex::encode(Sha256::digest(canonical_string(v).as_bytes()))
}

/// SHA-256 of the canonical form of a JSON document.
pub fn canonical_digest(bytes: &[u8]) -> Result<String, serde_json::Error> {
    let v: Value = serde_json::from_slice(bytes)?;
    Ok(digest_value(&v))
}

/// Default tolerances; every report echoes the set that was in effect.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    /// Loewner-order slack for input admissibility.
    pub psd: f64,
    /// KKT certificate tolerance.
    pub kkt: f64,
    /// Residual bound for the four geometric conditions after `reduce`.
    pub geometric: f64,
    /// Relative bound for `BL(datum) = 1/scale` after `reduce`.
    pub scaling: f64,
    /// Relative slack allowed between consecutive heat-flow values.
    pub heat: f64,
    /// Relative gap between the HC closed form and the optimizer corner.
    pub corner: f64,
    /// `λ_min(H − X)` floor in the contraction check.
    pub contraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            psd: blforge::linalg::PSD_TOL,
            kkt: 1e-6,
            geometric: 1e-7,
            scaling: 1e-6,
            heat: 1e-6,
            corner: 1e-8,
            contraction: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub datum_digest: String,
    pub seed: u64,
    pub tolerances: Tolerances,
    /// Milliseconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub results: Value,
    /// One line per failed check; empty when the run succeeded.
    pub failures: Vec<String>,
    pub exit_code: i32,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, tolerances: Tolerances) -> Self {
        RunReport {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            datum_digest: String::new(),
            seed,
            tolerances,
            timings: BTreeMap::new(),
            results: Value::Null,
            failures: Vec::new(),
            exit_code: 0,
        }
    }
}
