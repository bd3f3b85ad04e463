use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Categorical metadata keys, in encoding order.
pub const QUALITATIVE_KEYS: [&str; 12] = [
    "promotion_id",
    "publisher_platform",
    "platform",
    "genre",
    "sub_genre",
    "web_app",
    "funnel",
    "creative_type",
    "targeting_type",
    "targeting_gender",
    "targeting_os",
    "targeting_device",
];

/// Continuous metadata keys, in encoding order.
pub const QUANTITATIVE_KEYS: [&str; 4] = [
    "targeting_age_min",
    "targeting_age_max",
    "target_cost",
    "target_cpa",
];

/// Free-text keys; row `i` of a text embedding file embeds `TEXT_KEYS[i]`.
pub const TEXT_KEYS: [&str; 5] = [
    "advertiser_name",
    "account_name",
    "promotion_name",
    "creative_title",
    "creative_description",
];

/// One ad as it appears in a manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdRecord {
    pub ad_id: String,
    /// Content identity: ads sharing a video share frame embeddings.
    pub video_id: String,
    pub created_at: DateTime<Utc>,
    pub qualitative: BTreeMap<String, String>,
    pub quantitative: BTreeMap<String, f64>,
    #[serde(default)]
    pub text_fields: BTreeMap<String, String>,
    /// Zero for unlabeled manifests.
    #[serde(default)]
    pub impressions: u64,
    #[serde(default)]
    pub clicks: u64,
    pub duration_s: f64,
    pub frame_embed_ref: PathBuf,
    pub text_embed_ref: PathBuf,
}

impl AdRecord {
    pub fn validate(&self) -> Result<()> {
        if self.clicks > self.impressions {
            return Err(Error::InvalidArgument(format!(
                "ad {}: clicks ({}) exceed impressions ({})",
                self.ad_id, self.clicks, self.impressions
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ad {}: duration must be positive, got {}",
                self.ad_id, self.duration_s
            )));
        }
        Ok(())
    }

    pub fn qualitative_value(&self, key: &str) -> Result<&str> {
        self.qualitative
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn quantitative_value(&self, key: &str) -> Result<f64> {
        self.quantitative
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn is_labeled(&self) -> bool {
        self.impressions > 0
    }

    pub fn ctr(&self) -> Result<f64> {
        super::compute_ctr(self.clicks, self.impressions)
    }
}
