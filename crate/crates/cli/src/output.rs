//! Deterministic file emission: fixed float formatting (17 significant
//! digits), LF endings, stable key order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Render a float with 17 significant digits (round-trip exact for f64),
/// normalizing negative zero.
pub fn fmt_f64(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

pub struct CsvWriter {
    buf: String,
}

impl CsvWriter {
    pub fn new(header: &str) -> CsvWriter {
        CsvWriter {
            buf: format!("{header}\n"),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            let _ = write!(self.buf, "{}", fmt_f64(*v));
        }
        self.buf.push('\n');
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.buf.as_bytes())
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable output");
    text.push('\n');
    fs::write(path, text)
}
