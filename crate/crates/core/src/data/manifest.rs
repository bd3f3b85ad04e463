use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::AdRecord;
use crate::error::{Error, Result};

/// Reads a JSON-lines manifest. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_manifest(path: &Path) -> Result<Vec<AdRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AdRecord = serde_json::from_str(&line).map_err(|source| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        rec.validate()
            .map_err(|e| Error::corrupt(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[AdRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Embedding references are relative to the manifest's directory unless
/// absolute.
pub fn resolve_ref(base_dir: &Path, r: &Path) -> PathBuf {
    if r.is_absolute() {
        r.to_path_buf()
    } else {
        base_dir.join(r)
    }
}
