//! JSON documents for SSMs:
//! `{"kind": "dense"|"diagonal", "n": int, "a": [...], "b": [...], "c": [...]}`.
//!
//! Dense `a` may be nested rows or a flat row-major array. Reals are written
//! with 17 significant digits so a document round-trips bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ssm::{DenseSsm, DiagonalSsm, Ssm, StateSpace};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSsm {
    kind: String,
    n: usize,
    a: Value,
    b: Vec<f64>,
    c: Vec<f64>,
}

/// Formats a double with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_array(out: &mut String, values: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format_real(v));
    }
    out.push(']');
}

pub fn to_json(ssm: &Ssm) -> String {
    let n = ssm.n();
    let mut out = String::new();
    match ssm {
        Ssm::Dense(s) => {
            let _ = write!(out, "{{\"kind\": \"dense\", \"n\": {n}, \"a\": [");
            for r in 0..n {
                if r > 0 {
                    out.push_str(", ");
                }
                write_array(&mut out, s.a().row(r).iter().copied());
            }
            out.push(']');
        }
        Ssm::Diagonal(s) => {
            let _ = write!(out, "{{\"kind\": \"diagonal\", \"n\": {n}, \"a\": ");
            write_array(&mut out, s.a_diag().iter().copied());
        }
    }
    out.push_str(", \"b\": ");
    write_array(&mut out, ssm.b().iter().copied());
    out.push_str(", \"c\": ");
    write_array(&mut out, ssm.c().iter().copied());
    out.push('}');
    out
}

fn numbers(v: &Value, what: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| Error::Parse(format!("{what} must be an array")))?;
    arr.iter()
        .map(|x| x.as_f64().ok_or_else(|| Error::Parse(format!("{what} contains a non-number"))))
        .collect()
}

pub fn from_json(text: &str) -> Result<Ssm> {
    let raw: RawSsm = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let n = raw.n;
    if n == 0 {
        return Err(Error::Parse("n must be at least 1".into()));
    }
    if raw.b.len() != n || raw.c.len() != n {
        return Err(Error::Parse(format!(
            "b has {} and c has {} entries, n = {n}",
            raw.b.len(),
            raw.c.len()
        )));
    }
    let b = DVector::from_vec(raw.b);
    let c = DVector::from_vec(raw.c);
    let wrap = |e: Error| Error::Parse(e.to_string());
    match raw.kind.as_str() {
        "diagonal" => {
            let a = numbers(&raw.a, "a")?;
            if a.len() != n {
                return Err(Error::Parse(format!("diagonal a has {} entries, n = {n}", a.len())));
            }
            Ok(Ssm::Diagonal(DiagonalSsm::new(DVector::from_vec(a), b, c).map_err(wrap)?))
        }
        "dense" => {
            let outer = raw.a.as_array().ok_or_else(|| Error::Parse("a must be an array".into()))?;
            let flat = if outer.iter().all(Value::is_array) {
                if outer.len() != n {
                    return Err(Error::Parse(format!("a has {} rows, n = {n}", outer.len())));
                }
                let mut flat = Vec::with_capacity(n * n);
                for (r, row) in outer.iter().enumerate() {
                    let row = numbers(row, "a row")?;
                    if row.len() != n {
                        return Err(Error::Parse(format!("a row {r} has {} entries, n = {n}", row.len())));
                    }
                    flat.extend(row);
                }
                flat
            } else {
                let flat = numbers(&raw.a, "a")?;
                if flat.len() != n * n {
                    return Err(Error::Parse(format!("flat a has {} entries, n*n = {}", flat.len(), n * n)));
                }
                flat
            };
            let a = DMatrix::from_row_slice(n, n, &flat);
            Ok(Ssm::Dense(DenseSsm::new(a, b, c).map_err(wrap)?))
        }
        other => Err(Error::Parse(format!("unknown kind '{other}'"))),
    }
}

pub fn read_ssm(path: impl AsRef<Path>) -> Result<Ssm> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    from_json(&text)
}
