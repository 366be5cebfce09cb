//! Flat key-value records and CSV emission.
//!
//! Floats are written with 17 significant digits so every value re-parses to
//! the identical `f64`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A scalar cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{}", format_float(*v)),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Str(v) => write!(f, "{v}"),
        }
    }
}

/// 17 significant digits in scientific notation; non-finite values as
/// `nan`, `inf`, `-inf`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

macro_rules! value_from {
    ($($t:ty => $variant:ident via $conv:expr),* $(,)?) => {
        $(impl From<$t> for Value {
            fn from(v: $t) -> Self {
                Value::$variant($conv(v))
            }
        })*
    };
}

value_from! {
    f64 => Float via |v| v,
    i64 => Int via |v| v,
    i32 => Int via i64::from,
    u32 => Int via i64::from,
    usize => Int via |v: usize| v as i64,
    u64 => Int via |v: u64| v as i64,
    bool => Bool via |v| v,
    String => Str via |v| v,
    &str => Str via |v: &str| v.to_owned(),
}

/// Ordered flat key-value record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    entries: Vec<(String, Value)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<Value>) {
        self.entries.push((key.into(), value.into()));
    }

    /// Appends every entry of `other` with `prefix.` prepended to its key.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &Record) {
        for (k, v) in &other.entries {
            self.entries.push((format!("{prefix}.{k}"), v.clone()));
        }
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = &Value> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `key = value` lines; strings are quoted so the text is valid TOML.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let rendered = match v {
                Value::Str(s) => format!("{s:?}"),
                Value::Float(x) if !x.is_finite() => format!("{:?}", format_float(*x)),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {rendered}\n"));
        }
        out
    }
}

/// Writes homogeneous records as CSV with a header row.
///
/// `header` fixes the columns; every record must carry exactly those keys in
/// that order. An empty record list yields a header-only file.
pub fn emit_csv(header: &[&str], records: &[Record], path: &Path) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        if !r.keys().eq(header.iter().copied()) {
            return Err(Error::InvalidParameter(format!(
                "record {i} does not match the CSV header"
            )));
        }
    }
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in records {
        w.write_record(r.values().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Writes a flat summary record.
pub fn write_summary(record: &Record, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(record.to_flat_text().as_bytes()).map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_for_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        emit_csv(&["a", "b"], &[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\r\n");
    }

    #[test]
    fn one_record_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        let mut r = Record::new();
        r.push("x", 0.1);
        r.push("name", "a,b");
        emit_csv(&["x", "name"], &[r], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        let cell = text.lines().nth(1).unwrap().split(',').next().unwrap();
        assert_eq!(cell.parse::<f64>().unwrap(), 0.1);
        assert!(text.contains("\"a,b\""));
    }

    #[test]
    fn mismatched_record_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Record::new();
        r.push("y", 1);
        assert!(emit_csv(&["x"], &[r], &dir.path().join("bad.csv")).is_err());
    }

    #[test]
    fn missing_directory_reports_path() {
        let err = emit_csv(&["x"], &[], Path::new("/nonexistent/dir/out.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/out.csv"));
    }

    proptest::proptest! {
        #[test]
        fn floats_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = format_float(v);
            proptest::prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
