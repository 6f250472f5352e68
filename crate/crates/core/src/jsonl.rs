//! Newline-delimited JSON persistence for the record types.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::model::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Unknown fields are an error.
    #[default]
    Strict,
    /// Unknown fields are kept in the record's `extra` map and written back out.
    Lenient,
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

impl JsonlError {
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Line { line, .. } => Some(*line),
            JsonlError::Io { .. } => None,
        }
    }
}

pub fn parse_jsonl<T: Record, R: Read>(reader: R, mode: Mode) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| JsonlError::Line { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T =
            serde_json::from_str(&line).map_err(|e| JsonlError::Line { line: line_no, message: e.to_string() })?;
        if mode == Mode::Strict && !rec.extra().is_empty() {
            let names: Vec<&str> = rec.extra().keys().map(String::as_str).collect();
            return Err(JsonlError::Line { line: line_no, message: format!("unknown fields {names:?}") });
        }
        rec.validate().map_err(|message| JsonlError::Line { line: line_no, message })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl<T: Record>(path: &Path, mode: Mode) -> Result<Vec<T>, JsonlError> {
    let file = fs::File::open(path).map_err(|source| JsonlError::Io { path: path.to_path_buf(), source })?;
    parse_jsonl(file, mode)
}

pub fn to_jsonl_bytes<T: Record>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        // Record types contain only string keys and finite-or-null numbers.
        serde_json::to_writer(&mut out, r).expect("record serialization is infallible");
        out.push(b'\n');
    }
    out
}

pub fn write_jsonl<T: Record>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io { path: path.to_path_buf(), source };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(&to_jsonl_bytes(records)).map_err(io_err)?;
    w.flush().map_err(io_err)
}
