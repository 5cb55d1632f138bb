//! CSV tables with RFC-4180 quoting.

use std::path::Path;

use crate::error::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, None, format!("{other:?}")),
    }
}

/// Renders a header plus rows to CSV text.
pub fn to_string<S: AsRef<str>>(header: &[&str], rows: &[Vec<S>]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref()))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
}

pub fn write<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    std::fs::write(path, to_string(header, rows)).map_err(|e| Error::io(path, e))
}

/// Reads a CSV file with a header row, returning `(header, rows)`.
pub fn read(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(
            rec.map_err(|e| csv_err(path, e))?
                .iter()
                .map(String::from)
                .collect(),
        );
    }
    Ok((header, rows))
}

/// Formats a float with fixed decimals, normalizing negative zero.
pub fn fmt_f64(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}
