//! Result serialization: JSON and CSV, floats with 17 significant digits.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::Formatter;

/// Compact JSON with every float written as `{:.16e}`.
struct Sig17;

impl Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17);
    value
        .serialize(&mut ser)
        .expect("report types serialize infallibly");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// One CSV field.
pub enum Field {
    F(f64),
    I(u64),
    S(String),
    B(bool),
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::F(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::I(v as u64)
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::I(v)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::B(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::S(v.to_string())
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Header line plus one line per row, comma separated.
pub fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<Field>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row
            .into_iter()
            .map(|f| match f {
                Field::F(v) => format_float(v),
                Field::I(v) => v.to_string(),
                Field::S(s) => s,
                Field::B(b) => b.to_string(),
            })
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let v = vec![0.1, 1.0 / 3.0, -2.5e-300, f64::MAX];
        let s = to_json(&v);
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(to_json(&f64::NAN), "null");
    }

    #[test]
    fn csv_layout() {
        let s = to_csv(&["round", "A_hat"], [vec![Field::from(0usize), Field::from(0.5)]]);
        assert_eq!(s, "round,A_hat\n0,5.0000000000000000e-1\n");
    }
}
