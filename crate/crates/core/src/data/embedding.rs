//! AFEB embedding files: `"AFEB" | u32 version | u32 rows | u32 cols` then
//! `rows·cols` little-endian f32 values, row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const EMBED_MAGIC: &[u8; 4] = b"AFEB";
pub const EMBED_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Serializes `rows × cols` f32 values. Values must be finite.
pub fn encode_embedding(rows: usize, cols: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::shape("embedding payload", rows * cols, values.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("embedding value {i}")));
    }
    let dim = |d: usize| {
        u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    buf.extend_from_slice(EMBED_MAGIC);
    buf.extend_from_slice(&EMBED_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim(rows)?.to_le_bytes());
    buf.extend_from_slice(&dim(cols)?.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_embedding(path: &Path, rows: usize, cols: usize, values: &[f32]) -> Result<()> {
    let buf = encode_embedding(rows, cols, values)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Narrows to f32 before writing.
pub fn write_embedding_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let values: Vec<f32> = m.as_slice().iter().map(|&v| v as f32).collect();
    write_embedding(path, m.rows(), m.cols(), &values)
}

/// Parses an AFEB buffer; `path` is only used in error messages.
pub fn decode_embedding(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::corrupt(path, "shorter than the header"));
    }
    if &bytes[..4] != EMBED_MAGIC {
        return Err(Error::corrupt(path, "bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != EMBED_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: EMBED_VERSION,
            found: version,
        });
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::corrupt(path, "header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::corrupt(
            path,
            format!(
                "header says {rows}×{cols} ({expected} bytes) but payload has {} bytes",
                payload.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::corrupt(
                path,
                format!("non-finite value at index {i}"),
            ));
        }
        data.push(v as f64);
    }
    Ok(Matrix::from_parts(rows, cols, data))
}

pub fn read_embedding(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(path, &bytes)
}

/// Reads and checks dimensions; `rows = None` accepts any row count.
pub fn load_embedding(path: &Path, rows: Option<usize>, cols: usize) -> Result<Matrix> {
    let m = read_embedding(path)?;
    let rows_ok = rows.is_none_or(|r| r == m.rows());
    if !rows_ok || m.cols() != cols {
        let want = match rows {
            Some(r) => format!("{r}×{cols}"),
            None => format!("k×{cols}"),
        };
        return Err(Error::DimMismatch {
            path: path.to_path_buf(),
            expected: want,
            found: format!("{}×{}", m.rows(), m.cols()),
        });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.afeb");
        let values: Vec<f32> = (0..12).map(|i| i as f32 * 0.1 - 0.35).collect();
        write_embedding(&path, 3, 4, &values).unwrap();
        let m = load_embedding(&path, Some(3), 4).unwrap();
        for (a, b) in m.as_slice().iter().zip(&values) {
            assert_eq!(*a, *b as f64);
        }
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.afeb");
        write_embedding(&path, 14, 4, &vec![0.5; 56]).unwrap();
        assert!(matches!(
            load_embedding(&path, Some(15), 4),
            Err(Error::DimMismatch { .. })
        ));
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad.truncate(bad.len() - 4);
        assert!(matches!(
            decode_embedding(&path, &bad),
            Err(Error::CorruptFile { .. })
        ));

        let mut bad = good.clone();
        bad[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_embedding(&path, &bad),
            Err(Error::CorruptFile { .. })
        ));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_embedding(&path, &bad),
            Err(Error::VersionMismatch { .. })
        ));

        assert!(matches!(
            decode_embedding(&path, b"AFE"),
            Err(Error::CorruptFile { .. })
        ));
        assert!(matches!(
            read_embedding(&dir.path().join("missing.afeb")),
            Err(Error::Io { .. })
        ));
        assert!(write_embedding(&path, 1, 2, &[1.0, f32::INFINITY]).is_err());
    }
}
