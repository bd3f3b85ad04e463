//! Binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AFPM" | u32 version | u64 len | ModelConfig as JSON (len bytes)
//! u32 tensor count
//! per tensor: u32 len | name | u32 ndims | u64 dims... | f64 values...
//! ```
//!
//! Values are written bit-for-bit, so a save/load round trip is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 4] = b"AFPM";
pub const PARAM_VERSION: u32 = 1;

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAM_MAGIC);
    buf.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&params.config)?;
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config);
    let tensors = params.state_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Loads a parameter file using the configuration stored inside it.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(path, &bytes);
    let config = read_header(&mut r)?;
    let mut params = ModelParams::zeros(config)?;
    read_tensors(&mut r, &mut params)?;
    Ok(params)
}

/// Loads a parameter file that must fit `expected`'s architecture.
///
/// Tensor shapes are checked against `expected`, and a vocabulary
/// fingerprint recorded on both sides must agree.
pub fn load_params_for(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(path, &bytes);
    let stored = read_header(&mut r)?;
    if let (Some(a), Some(b)) = (&stored.vocab_fingerprint, &expected.vocab_fingerprint) {
        if a != b {
            return Err(Error::VocabMismatch(format!(
                "{} was trained with vocabulary {a}, current vocabulary is {b}",
                path.display()
            )));
        }
    }
    let mut params = ModelParams::zeros(expected.clone())?;
    read_tensors(&mut r, &mut params)?;
    // Behavioural switches come from the file; shapes were already checked.
    params.config.flags = stored.flags;
    params.config.dropout_p = stored.dropout_p;
    params.config.vocab_fingerprint = stored.vocab_fingerprint;
    Ok(params)
}

fn read_header(r: &mut Reader<'_>) -> Result<ModelConfig> {
    let magic = r.take(4)?;
    if magic != PARAM_MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != PARAM_VERSION {
        return Err(Error::VersionMismatch {
            path: r.path.to_path_buf(),
            expected: PARAM_VERSION,
            found: version,
        });
    }
    let len = r.len_u64()?;
    let json = r.take(len)?;
    serde_json::from_slice(json).map_err(|e| r.corrupt(format!("config: {e}")))
}

fn read_tensors(r: &mut Reader<'_>, params: &mut ModelParams) -> Result<()> {
    let layout: Vec<(String, Vec<usize>)> = params
        .state_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.dims))
        .collect();
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(r.corrupt(format!("expected {} tensors, found {count}", layout.len())));
    }
    let mut values = Vec::with_capacity(count);
    for (name, dims) in &layout {
        let len = r.u32()? as usize;
        let found = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.corrupt("tensor name is not UTF-8"))?
            .to_string();
        if &found != name {
            return Err(r.corrupt(format!("expected tensor `{name}`, found `{found}`")));
        }
        let ndims = r.u32()? as usize;
        let mut found_dims = Vec::with_capacity(ndims.min(8));
        for _ in 0..ndims {
            found_dims.push(r.len_u64()?);
        }
        if &found_dims != dims {
            return Err(Error::shape(
                format!("tensor `{name}`"),
                format!("{dims:?}"),
                format!("{found_dims:?}"),
            ));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| r.corrupt("tensor too large"))?,
        )?;
        values.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect::<Vec<_>>(),
        );
    }
    if !r.is_done() {
        return Err(r.corrupt("trailing bytes"));
    }
    for (dst, src) in params.state_slices_mut().into_iter().zip(values) {
        dst.copy_from_slice(&src);
    }
    Ok(())
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self {
            path,
            bytes,
            pos: 0,
        }
    }

    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::corrupt(self.path, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.corrupt("length overflows usize"))
    }

    fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
