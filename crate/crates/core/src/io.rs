//! JSON and JSON-lines file helpers with line/field diagnostics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Schema { path: PathBuf, line: usize, column: usize, message: String },
}

impl IoError {
    pub fn path(&self) -> &Path {
        match self {
            IoError::Io { path, .. } | IoError::Schema { path, .. } => path,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, IoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn schema_err(path: &Path, line_offset: usize, e: serde_json::Error) -> IoError {
    IoError::Schema { path: path.to_path_buf(), line: e.line() + line_offset, column: e.column(), message: e.to_string() }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| schema_err(path, 0, e))
}

/// Writes pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).expect("serialisable value");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            // single-line records: report the file line, keep serde's column
            IoError::Schema { path: path.to_path_buf(), line: i + 1, column: e.column(), message: e.to_string() }
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r).expect("serialisable record");
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn ensure_parent(path: &Path) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Rec {
        a: u32,
        b: f64,
    }

    #[test]
    fn jsonl_round_trip_and_line_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x/recs.jsonl");
        let recs = vec![Rec { a: 1, b: 0.1 }, Rec { a: 2, b: -3.5 }];
        write_jsonl(&p, &recs).unwrap();
        assert_eq!(read_jsonl::<Rec>(&p).unwrap(), recs);

        std::fs::write(&p, "{\"a\":1,\"b\":2}\n\n{\"a\":\"x\",\"b\":2}\n").unwrap();
        match read_jsonl::<Rec>(&p) {
            Err(IoError::Schema { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("invalid type"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_flagged() {
        let err = read_json::<Rec>(Path::new("/nonexistent/file.json")).unwrap_err();
        assert!(err.is_missing());
    }
}
