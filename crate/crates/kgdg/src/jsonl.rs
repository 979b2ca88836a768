//! Minimal JSONL reading and writing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Read every non-empty line of a JSONL file, handing `(line_number, parse result)`
/// to the caller. Line numbers are 1-based.
pub fn read_lines<T, E>(
    path: &Path,
    io_err: impl Fn(std::io::Error) -> E,
    line_err: impl Fn(usize, String) -> E,
) -> Result<Vec<(usize, T)>, E>
where
    T: DeserializeOwned,
{
    let file = File::open(path).map_err(&io_err)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(&io_err)?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| line_err(lineno, e.to_string()))?;
        out.push((lineno, value));
    }
    Ok(out)
}

/// Serialize items one per line.
pub fn write_all<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn to_line<T: Serialize>(item: &T) -> String {
    let mut line = serde_json::to_string(item).expect("jsonl items serialize infallibly");
    line.push('\n');
    line
}
