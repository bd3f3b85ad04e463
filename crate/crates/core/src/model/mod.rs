//! The multimodal CTR network: visual, metadata and text branches, modality
//! fusion over L2-normalised branch outputs, and the regression head.

mod backward;
mod forward;
mod io;
mod params;

pub use backward::backward;
pub use forward::{
    forward, AdFeatures, BnSlot, BranchOutput, ForwardOptions, ForwardPass, ForwardTrace, HeadCache,
};
pub use forward::{
    fuse_modalities, head_forward, metadata_branch, text_branch, visual_branch, Fusion, HeadOutput,
};
pub use io::{load_params, load_params_for, save_params, PARAM_MAGIC, PARAM_VERSION};
pub use params::{ModelGrads, ModelParams, ParamGroup, Tensor};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three input modalities, in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Meta,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Meta, Modality::Text];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Meta => "meta",
            Modality::Text => "text",
        }
    }
}

/// Architecture switches used by the ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub use_visual: bool,
    pub use_meta: bool,
    pub use_text: bool,
    /// Feed categorical and continuous metadata through separate FC+BN
    /// stacks. When off, the concatenated inputs go through one FC layer.
    pub separate_meta: bool,
    /// The overfitting-suppression layers: BN after the frame and text
    /// projections (and after the joint metadata projection) plus the head
    /// dropout.
    pub extra_regularization: bool,
    /// Standardise continuous metadata with training-split statistics
    /// before it enters the network.
    pub prenormalize_quant: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_visual: true,
            use_meta: true,
            use_text: true,
            separate_meta: true,
            extra_regularization: true,
            prenormalize_quant: false,
        }
    }
}

impl AblationFlags {
    pub fn uses(&self, m: Modality) -> bool {
        match m {
            Modality::Visual => self.use_visual,
            Modality::Meta => self.use_meta,
            Modality::Text => self.use_text,
        }
    }

    pub fn active(&self) -> Vec<Modality> {
        Modality::ALL
            .into_iter()
            .filter(|&m| self.uses(m))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_frames: usize,
    pub frame_embed_dim: usize,
    pub text_embed_dim: usize,
    /// Width of the concatenated one-hot blocks (derived from the vocab).
    pub qual_onehot_dim: usize,
    /// Number of continuous metadata inputs (derived from the vocab).
    pub quant_dim: usize,
    pub qual_feat_dim: usize,
    pub quant_feat_dim: usize,
    pub modal_dim: usize,
    pub head_hidden_dim: usize,
    pub dropout_p: f64,
    pub flags: AblationFlags,
    /// Fingerprint of the encoder vocabulary the model was trained with.
    #[serde(default)]
    pub vocab_fingerprint: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_frames: 15,
            frame_embed_dim: 2048,
            text_embed_dim: 300,
            qual_onehot_dim: 0,
            quant_dim: 4,
            qual_feat_dim: 16,
            quant_feat_dim: 240,
            modal_dim: 256,
            head_hidden_dim: 256,
            dropout_p: 0.5,
            flags: AblationFlags::default(),
            vocab_fingerprint: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        for (name, v) in [
            ("frame_embed_dim", self.frame_embed_dim),
            ("text_embed_dim", self.text_embed_dim),
            ("qual_feat_dim", self.qual_feat_dim),
            ("quant_feat_dim", self.quant_feat_dim),
            ("modal_dim", self.modal_dim),
            ("head_hidden_dim", self.head_hidden_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.flags.use_meta && self.qual_onehot_dim + self.quant_dim == 0 {
            return bad("metadata branch has no inputs".into());
        }
        if self.flags.separate_meta && self.qual_feat_dim + self.quant_feat_dim != self.modal_dim {
            return bad(format!(
                "qual_feat_dim + quant_feat_dim ({} + {}) must equal modal_dim ({})",
                self.qual_feat_dim, self.quant_feat_dim, self.modal_dim
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidProbability(self.dropout_p));
        }
        if self.flags.active().is_empty() {
            return Err(Error::EmptyActiveSet);
        }
        Ok(())
    }

    pub fn active_modalities(&self) -> Vec<Modality> {
        self.flags.active()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimensions() {
        let c = ModelConfig {
            qual_onehot_dim: 10,
            ..ModelConfig::default()
        };
        c.validate().unwrap();
        assert_eq!(c.qual_feat_dim + c.quant_feat_dim, c.modal_dim);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let base = ModelConfig {
            qual_onehot_dim: 10,
            ..ModelConfig::default()
        };
        let mut c = base.clone();
        c.quant_feat_dim = 100;
        assert!(c.validate().is_err());
        c.flags.separate_meta = false;
        assert!(c.validate().is_ok());

        let mut c = base.clone();
        c.n_frames = 0;
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.flags.use_visual = false;
        c.flags.use_meta = false;
        c.flags.use_text = false;
        assert!(matches!(c.validate(), Err(Error::EmptyActiveSet)));

        let mut c = base;
        c.dropout_p = 1.0;
        assert!(c.validate().is_err());
    }
}
