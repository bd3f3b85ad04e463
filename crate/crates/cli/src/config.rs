use std::fs;
use std::path::{Path, PathBuf};

use adfusion_core::data::{EncodeOptions, EncoderVocab, FeatureExclusions, SplitRatios};
use adfusion_core::model::{AblationFlags, ModelConfig};
use adfusion_core::training::TrainConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const SCHEMA_VERSION: u32 = 1;

/// Architecture settings a user chooses; input widths come from the
/// encoder vocabulary at train time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub n_frames: usize,
    pub frame_embed_dim: usize,
    pub text_embed_dim: usize,
    pub qual_feat_dim: usize,
    pub quant_feat_dim: usize,
    pub modal_dim: usize,
    pub head_hidden_dim: usize,
    pub dropout_p: f64,
    pub flags: AblationFlags,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            n_frames: m.n_frames,
            frame_embed_dim: m.frame_embed_dim,
            text_embed_dim: m.text_embed_dim,
            qual_feat_dim: m.qual_feat_dim,
            quant_feat_dim: m.quant_feat_dim,
            modal_dim: m.modal_dim,
            head_hidden_dim: m.head_hidden_dim,
            dropout_p: m.dropout_p,
            flags: m.flags,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, vocab: Option<&EncoderVocab>) -> ModelConfig {
        ModelConfig {
            n_frames: self.n_frames,
            frame_embed_dim: self.frame_embed_dim,
            text_embed_dim: self.text_embed_dim,
            qual_onehot_dim: vocab.map_or(1, EncoderVocab::qual_onehot_dim),
            quant_dim: vocab.map_or(1, EncoderVocab::quant_dim),
            qual_feat_dim: self.qual_feat_dim,
            quant_feat_dim: self.quant_feat_dim,
            modal_dim: self.modal_dim,
            head_hidden_dim: self.head_hidden_dim,
            dropout_p: self.dropout_p,
            flags: self.flags,
            vocab_fingerprint: vocab.map(EncoderVocab::fingerprint),
        }
    }

    pub fn encode_options(&self) -> EncodeOptions {
        EncodeOptions {
            n_frames: self.n_frames,
            frame_dim: self.frame_embed_dim,
            text_dim: self.text_embed_dim,
            prenormalize_quant: self.flags.prenormalize_quant,
        }
    }
}

/// Everything a training run depends on. Relative paths are taken relative
/// to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub manifest: PathBuf,
    /// Directory embedding references resolve against; defaults to the
    /// manifest's directory.
    #[serde(default)]
    pub embeddings_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub exclusions: FeatureExclusions,
}

impl RunConfig {
    pub fn new(manifest: PathBuf, output_dir: PathBuf) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            manifest,
            embeddings_dir: None,
            output_dir,
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            split: SplitRatios::default(),
            exclusions: FeatureExclusions::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        check_schema(cfg.schema_version)?;
        Ok(cfg)
    }

    /// Checks ranges and that the referenced inputs exist.
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        let usage = |e: adfusion_core::Error| UsageError(e.to_string());
        self.train.validate().map_err(usage)?;
        self.split.validate().map_err(usage)?;
        self.exclusions.validate().map_err(usage)?;
        self.model.model_config(None).validate().map_err(usage)?;
        if !self.manifest.is_file() {
            return Err(
                UsageError(format!("manifest {} not found", self.manifest.display())).into(),
            );
        }
        if let Some(dir) = &self.embeddings_dir {
            if !dir.is_dir() {
                return Err(
                    UsageError(format!("embeddings dir {} not found", dir.display())).into(),
                );
            }
        }
        Ok(())
    }

    pub fn base_dir(&self) -> PathBuf {
        match &self.embeddings_dir {
            Some(d) => d.clone(),
            None => self
                .manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        }
    }
}

pub fn check_schema(found: u32) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(UsageError(format!(
            "unsupported schema_version {found} (expected {SCHEMA_VERSION})"
        ))
        .into());
    }
    Ok(())
}

/// Pretty JSON with a trailing newline; the same value always gives the
/// same bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
