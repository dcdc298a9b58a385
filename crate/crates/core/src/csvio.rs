//! Header-checked CSV reading with per-row rejection reporting.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CsvError {
    #[error("missing header row (expected `{expected}`)")]
    MissingHeader { expected: String },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("read failed: {0}")]
    Io(String),
}

/// A row that failed validation. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

/// Rows that parsed, plus the ones that did not.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub rejections: Vec<Rejection>,
}

/// Reads a CSV stream whose header must equal `expected` column-for-column.
/// Each data row is handed to `parse_row`; failures become [`Rejection`]s.
pub fn read_rows<R, T, F>(reader: R, expected: &[&str], mut parse_row: F) -> Result<Parsed<T>, CsvError>
where
    R: Read,
    F: FnMut(&[&str]) -> Result<T, String>,
{
    let mut data = Vec::new();
    let mut reader = reader;
    reader.read_to_end(&mut data).map_err(|e| CsvError::Io(e.to_string()))?;
    // a line ends at LF, CRLF or a lone CR
    let newlines: Vec<usize> = (0..data.len())
        .filter(|&i| data[i] == b'\n' || (data[i] == b'\r' && data.get(i + 1) != Some(&b'\n')))
        .collect();
    // the reader's own line count lags on CRLF and blank lines, so count from
    // the first byte of the record instead
    let line_of = |pos: Option<&csv::Position>| -> u64 {
        let Some(byte) = pos.map(|p| p.byte() as usize) else { return 0 };
        let start = data[byte.min(data.len())..]
            .iter()
            .position(|b| *b != b'\r' && *b != b'\n')
            .map_or(data.len(), |i| byte + i);
        newlines.partition_point(|&n| n < start) as u64 + 1
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(data.as_slice());
    let expected_joined = expected.join(",");

    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => {
            return Err(CsvError::HeaderMismatch { expected: expected_joined, found: e.to_string() })
        }
        None => return Err(CsvError::MissingHeader { expected: expected_joined }),
    };
    let found: Vec<&str> = header
        .iter()
        .enumerate()
        .map(|(i, h)| if i == 0 { h.trim_start_matches('\u{feff}') } else { h })
        .collect();
    if found != expected {
        return Err(CsvError::HeaderMismatch { expected: expected_joined, found: found.join(",") });
    }

    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for row in rows {
        match row {
            Ok(rec) => {
                let line = line_of(rec.position());
                let fields: Vec<&str> = rec.iter().collect();
                if fields.len() == 1 && fields[0].is_empty() {
                    continue;
                }
                if fields.len() != expected.len() {
                    rejections.push(Rejection {
                        line,
                        reason: format!("expected {} fields, found {}", expected.len(), fields.len()),
                    });
                    continue;
                }
                match parse_row(&fields) {
                    Ok(v) => records.push(v),
                    Err(reason) => rejections.push(Rejection { line, reason }),
                }
            }
            Err(e) => {
                let line = line_of(e.position());
                rejections.push(Rejection { line, reason: e.to_string() });
            }
        }
    }
    Ok(Parsed { records, rejections })
}

pub(crate) fn parse_f64(field: &str, name: &str) -> Result<f64, String> {
    let v: f64 = field.parse().map_err(|_| format!("{name}: `{field}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{name}: `{field}` is not finite"))
    }
}

pub(crate) fn non_empty<'a>(field: &'a str, name: &str) -> Result<&'a str, String> {
    if field.is_empty() {
        Err(format!("{name} is empty"))
    } else {
        Ok(field)
    }
}

/// Writes rows of display-formatted fields; used for the plain dumps.
pub fn write_csv<W: std::io::Write>(
    writer: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()
}
