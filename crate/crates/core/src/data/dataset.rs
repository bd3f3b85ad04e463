use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::{load_embedding, log_transform_ctr, resolve_ref, AdRecord, EncoderVocab, TEXT_KEYS};
use crate::error::Result;
use crate::model::AdFeatures;
use crate::numerics::Matrix;

/// Caches decoded embedding files; ads sharing a video share one matrix.
#[derive(Debug, Default)]
pub struct EmbeddingStore {
    cache: Mutex<HashMap<PathBuf, Arc<Matrix>>>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&self, path: &Path, rows: Option<usize>, cols: usize) -> Result<Arc<Matrix>> {
        if let Some(m) = self.cache.lock().expect("store lock").get(path) {
            if rows.is_none_or(|r| r == m.rows()) && m.cols() == cols {
                return Ok(Arc::clone(m));
            }
        }
        let m = Arc::new(load_embedding(path, rows, cols)?);
        self.cache
            .lock()
            .expect("store lock")
            .insert(path.to_path_buf(), Arc::clone(&m));
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `frames/v1.afeb` → `frames/v1.n10.afeb` when that file exists, so one
/// corpus can carry frame sets for several sampling densities.
pub fn frame_variant_path(path: &Path, n_frames: usize) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let variant = path.with_file_name(format!("{stem}.n{n_frames}.afeb"));
    if variant.is_file() {
        variant
    } else {
        path.to_path_buf()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    pub n_frames: usize,
    pub frame_dim: usize,
    pub text_dim: usize,
    pub prenormalize_quant: bool,
}

/// A record turned into model inputs.
#[derive(Debug, Clone)]
pub struct EncodedAd {
    pub ad_id: String,
    pub frames: Arc<Matrix>,
    /// Only the rows of the vocabulary's text keys.
    pub texts: Matrix,
    pub qualitative: Vec<f64>,
    pub quantitative: Vec<f64>,
    /// Log-transformed CTR; `None` for unlabeled records.
    pub target: Option<f64>,
}

impl EncodedAd {
    pub fn features(&self) -> AdFeatures<'_> {
        AdFeatures {
            frames: &self.frames,
            qualitative: &self.qualitative,
            quantitative: &self.quantitative,
            texts: &self.texts,
        }
    }
}

pub fn encode_record(
    r: &AdRecord,
    base_dir: &Path,
    vocab: &EncoderVocab,
    opts: &EncodeOptions,
    store: &EmbeddingStore,
) -> Result<EncodedAd> {
    let frame_path = frame_variant_path(&resolve_ref(base_dir, &r.frame_embed_ref), opts.n_frames);
    let frames = store.load(&frame_path, Some(opts.n_frames), opts.frame_dim)?;
    let text_path = resolve_ref(base_dir, &r.text_embed_ref);
    let all_texts = read_text_embedding(&text_path, opts.text_dim)?;
    let keep: Vec<Vec<f64>> = vocab
        .text_rows()
        .into_iter()
        .map(|i| all_texts.row(i).to_vec())
        .collect();
    let texts = if keep.is_empty() {
        Matrix::zeros(0, opts.text_dim)
    } else {
        Matrix::from_rows(&keep)?
    };
    let target = if r.is_labeled() {
        Some(log_transform_ctr(r.ctr()?)?)
    } else {
        None
    };
    Ok(EncodedAd {
        ad_id: r.ad_id.clone(),
        frames,
        texts,
        qualitative: vocab.encode_qualitative(r)?,
        quantitative: vocab.encode_quantitative(r, opts.prenormalize_quant)?,
        target,
    })
}

/// Encodes records in parallel; output order matches input order.
pub fn encode_records(
    records: &[&AdRecord],
    base_dir: &Path,
    vocab: &EncoderVocab,
    opts: &EncodeOptions,
    store: &EmbeddingStore,
) -> Result<Vec<EncodedAd>> {
    records
        .par_iter()
        .map(|r| encode_record(r, base_dir, vocab, opts, store))
        .collect()
}

/// Text files always hold one row per schema text key.
pub fn read_text_embedding(path: &Path, text_dim: usize) -> Result<Matrix> {
    load_embedding(path, Some(TEXT_KEYS.len()), text_dim)
}
