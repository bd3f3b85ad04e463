use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    EmbeddingStore, EncodeOptions, FeatureExclusions, SplitCorpus, QUALITATIVE_KEYS,
    QUANTITATIVE_KEYS, TEXT_KEYS,
};
use crate::error::{Error, Result};
use crate::model::{AblationFlags, ModelConfig};
use crate::training::{evaluate, train, TrainConfig};

/// How metadata enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaVariant {
    /// Raw concatenation through one dense layer.
    Unprocessed,
    /// Continuous keys standardised, then one dense layer.
    Prenormalized,
    /// Categorical and continuous keys through separate stacks.
    Separated,
    SeparatedPrenormalized,
}

impl MetaVariant {
    pub fn separated(self) -> bool {
        matches!(self, Self::Separated | Self::SeparatedPrenormalized)
    }

    pub fn prenormalized(self) -> bool {
        matches!(self, Self::Prenormalized | Self::SeparatedPrenormalized)
    }
}

/// One training run of an ablation campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub id: String,
    pub label: String,
    pub use_visual: bool,
    pub use_meta: bool,
    pub use_text: bool,
    pub meta_variant: MetaVariant,
    pub regularization: bool,
    pub n_frames: usize,
    #[serde(default)]
    pub exclude_meta: Option<String>,
    #[serde(default)]
    pub exclude_text: Option<String>,
}

impl AblationSpec {
    /// The full model: all modalities, separated metadata, regularization,
    /// 15 frames.
    pub fn full(id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            use_visual: true,
            use_meta: true,
            use_text: true,
            meta_variant: MetaVariant::Separated,
            regularization: true,
            n_frames: 15,
            exclude_meta: None,
            exclude_text: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_visual || self.use_meta || self.use_text) {
            return Err(Error::InvalidArgument(format!(
                "ablation `{}`: at least one modality must be active",
                self.id
            )));
        }
        if self.n_frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "ablation `{}`: n_frames must be positive",
                self.id
            )));
        }
        self.exclusions().map(|_| ())
    }

    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            use_visual: self.use_visual,
            use_meta: self.use_meta,
            use_text: self.use_text,
            separate_meta: self.meta_variant.separated(),
            extra_regularization: self.regularization,
            prenormalize_quant: self.meta_variant.prenormalized(),
        }
    }

    pub fn exclusions(&self) -> Result<FeatureExclusions> {
        let mut ex = FeatureExclusions::default();
        if let Some(k) = &self.exclude_meta {
            if QUALITATIVE_KEYS.contains(&k.as_str()) {
                ex.qualitative.push(k.clone());
            } else if QUANTITATIVE_KEYS.contains(&k.as_str()) {
                ex.quantitative.push(k.clone());
            } else {
                return Err(Error::InvalidArgument(format!(
                    "ablation `{}`: unknown metadata key `{k}`",
                    self.id
                )));
            }
        }
        if let Some(k) = &self.exclude_text {
            if !TEXT_KEYS.contains(&k.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "ablation `{}`: unknown text key `{k}`",
                    self.id
                )));
            }
            ex.text.push(k.clone());
        }
        ex.validate()?;
        Ok(ex)
    }
}

/// The fifteen rows of the modality / metadata-processing / regularization /
/// frame-count comparison, numbered 1–15.
pub fn architecture_specs() -> Vec<AblationSpec> {
    let full = |id: u32, label: &str| AblationSpec::full(id.to_string(), label);
    let only = |id: u32, label: &str, v: bool, m: bool, t: bool| AblationSpec {
        use_visual: v,
        use_meta: m,
        use_text: t,
        ..full(id, label)
    };
    let meta = |id: u32, label: &str, variant: MetaVariant| AblationSpec {
        meta_variant: variant,
        ..full(id, label)
    };
    vec![
        only(1, "Visual", true, false, false),
        only(2, "Metadata", false, true, false),
        only(3, "Text", false, false, true),
        only(4, "Visual & Metadata", true, true, false),
        only(5, "Visual & Text", true, false, true),
        only(6, "Metadata & Text", false, true, true),
        meta(7, "Unprocessed metadata", MetaVariant::Unprocessed),
        meta(8, "Normalized metadata", MetaVariant::Prenormalized),
        meta(
            9,
            "Separated & normalized metadata",
            MetaVariant::SeparatedPrenormalized,
        ),
        AblationSpec {
            regularization: false,
            ..full(10, "No additional regularization layers")
        },
        AblationSpec {
            n_frames: 10,
            ..full(11, "Full (n = 10)")
        },
        AblationSpec {
            n_frames: 20,
            ..full(12, "Full (n = 20)")
        },
        AblationSpec {
            use_text: false,
            meta_variant: MetaVariant::Unprocessed,
            regularization: false,
            ..full(13, "Baseline-like (visual & raw metadata)")
        },
        only(14, "Full without text", true, true, false),
        full(15, "Full"),
    ]
}

/// One run per metadata key, each leaving that key out of the full model.
pub fn meta_exclusion_specs() -> Vec<AblationSpec> {
    QUALITATIVE_KEYS
        .iter()
        .chain(QUANTITATIVE_KEYS.iter())
        .map(|k| AblationSpec {
            exclude_meta: Some(k.to_string()),
            ..AblationSpec::full(format!("exc_meta_{k}"), format!("Exc {k}"))
        })
        .collect()
}

/// One run per text field, each leaving that field out of the full model.
pub fn text_exclusion_specs() -> Vec<AblationSpec> {
    TEXT_KEYS
        .iter()
        .map(|k| AblationSpec {
            exclude_text: Some(k.to_string()),
            ..AblationSpec::full(format!("exc_text_{k}"), format!("Exc {k}"))
        })
        .collect()
}

/// Dimensions shared by every run of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignBase {
    /// Layer widths and embedding sizes; flags, frame count and input
    /// widths are overridden per run.
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub spec: AblationSpec,
    pub rmse: Option<f64>,
    pub pearson_r: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Set when the run failed; the other metrics are then `None`.
    pub error: Option<String>,
}

impl AblationResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Trains and tests one spec on the corpus's fixed split.
pub fn run_ablation(
    spec: &AblationSpec,
    corpus: &SplitCorpus,
    base: &CampaignBase,
    store: &EmbeddingStore,
) -> Result<AblationResult> {
    spec.validate()?;
    let opts = EncodeOptions {
        n_frames: spec.n_frames,
        frame_dim: base.model.frame_embed_dim,
        text_dim: base.model.text_embed_dim,
        prenormalize_quant: spec.meta_variant.prenormalized(),
    };
    let enc = corpus.encode(&spec.exclusions()?, &opts, store)?;
    let config = ModelConfig {
        n_frames: spec.n_frames,
        qual_onehot_dim: enc.vocab.qual_onehot_dim(),
        quant_dim: enc.vocab.quant_dim(),
        flags: spec.flags(),
        vocab_fingerprint: Some(enc.vocab.fingerprint()),
        ..base.model.clone()
    };
    let outcome = train(config, &base.train, &enc.train, &enc.valid)?;
    let ev = evaluate(&outcome.best, &enc.test)?;
    Ok(AblationResult {
        spec: spec.clone(),
        rmse: Some(ev.rmse),
        pearson_r: ev.pearson_r,
        best_epoch: Some(outcome.log.best_epoch),
        error: None,
    })
}

/// Runs every spec, `jobs` at a time. A failing run is recorded in its row
/// and the campaign continues. Rows come back in spec order.
pub fn run_ablation_campaign(
    specs: &[AblationSpec],
    corpus: &SplitCorpus,
    base: &CampaignBase,
    jobs: usize,
) -> Result<Vec<AblationResult>> {
    let store = EmbeddingStore::new();
    let run = |spec: &AblationSpec| {
        run_ablation(spec, corpus, base, &store).unwrap_or_else(|e| AblationResult {
            spec: spec.clone(),
            rmse: None,
            pearson_r: None,
            best_epoch: None,
            error: Some(e.to_string()),
        })
    };
    if jobs <= 1 {
        return Ok(specs.iter().map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| specs.par_iter().map(run).collect()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mark(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        ""
    }
}

/// Results as CSV, one row per run.
pub fn write_campaign_csv(path: &Path, results: &[AblationResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "id",
        "label",
        "visual",
        "metadata",
        "text",
        "normalized",
        "separated",
        "regularization",
        "n_frames",
        "exclude_meta",
        "exclude_text",
        "rmse",
        "r",
        "best_epoch",
        "error",
    ])?;
    for r in results {
        let s = &r.spec;
        w.write_record([
            s.id.as_str(),
            &s.label,
            mark(s.use_visual),
            mark(s.use_meta),
            mark(s.use_text),
            mark(s.meta_variant.prenormalized()),
            mark(s.meta_variant.separated()),
            mark(s.regularization),
            &s.n_frames.to_string(),
            s.exclude_meta.as_deref().unwrap_or(""),
            s.exclude_text.as_deref().unwrap_or(""),
            &fmt_opt(r.rmse),
            &fmt_opt(r.pearson_r),
            &r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            r.error.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_campaign_json(path: &Path, results: &[AblationResult]) -> Result<()> {
    let text = serde_json::to_string_pretty(results)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
