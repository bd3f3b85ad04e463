use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdRecord, QUALITATIVE_KEYS, QUANTITATIVE_KEYS, TEXT_KEYS};
use crate::error::{Error, Result};

/// Guards the division when a quantitative key is constant on the train split.
pub const STD_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryList {
    pub key: String,
    /// Sorted, unique. The one-hot block has one more slot for UNKNOWN.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantStats {
    pub key: String,
    pub mean: f64,
    /// Population standard deviation over the train split.
    pub std: f64,
}

/// Keys removed from the input entirely (ablation runs).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureExclusions {
    pub qualitative: Vec<String>,
    pub quantitative: Vec<String>,
    pub text: Vec<String>,
}

impl FeatureExclusions {
    pub fn is_empty(&self) -> bool {
        self.qualitative.is_empty() && self.quantitative.is_empty() && self.text.is_empty()
    }

    /// Rejects keys that are not part of the schema.
    pub fn validate(&self) -> Result<()> {
        let check = |keys: &[String], known: &[&str], kind: &str| {
            for k in keys {
                if !known.contains(&k.as_str()) {
                    return Err(Error::InvalidArgument(format!("unknown {kind} key `{k}`")));
                }
            }
            Ok(())
        };
        check(&self.qualitative, &QUALITATIVE_KEYS, "qualitative")?;
        check(&self.quantitative, &QUANTITATIVE_KEYS, "quantitative")?;
        check(&self.text, &TEXT_KEYS, "text")
    }
}

/// Everything needed to turn a record into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderVocab {
    pub qualitative: Vec<CategoryList>,
    pub quantitative: Vec<QuantStats>,
    /// Text fields fed to the model, in embedding-row order.
    pub text_keys: Vec<String>,
}

impl EncoderVocab {
    /// Builds the vocabulary from training records only.
    pub fn build<'a>(
        train: impl IntoIterator<Item = &'a AdRecord>,
        exclude: &FeatureExclusions,
    ) -> Result<Self> {
        exclude.validate()?;
        let qual_keys: Vec<&str> = QUALITATIVE_KEYS
            .into_iter()
            .filter(|k| !exclude.qualitative.iter().any(|e| e == k))
            .collect();
        let quant_keys: Vec<&str> = QUANTITATIVE_KEYS
            .into_iter()
            .filter(|k| !exclude.quantitative.iter().any(|e| e == k))
            .collect();
        let mut cats: Vec<BTreeSet<String>> = vec![BTreeSet::new(); qual_keys.len()];
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); quant_keys.len()];
        let mut n = 0usize;
        for r in train {
            n += 1;
            for (set, k) in cats.iter_mut().zip(&qual_keys) {
                set.insert(r.qualitative_value(k)?.to_string());
            }
            for (vals, k) in values.iter_mut().zip(&quant_keys) {
                vals.push(r.quantitative_value(k)?);
            }
        }
        if n == 0 {
            return Err(Error::EmptyInput("vocabulary construction"));
        }
        Ok(Self {
            qualitative: qual_keys
                .iter()
                .zip(cats)
                .map(|(k, set)| CategoryList {
                    key: k.to_string(),
                    categories: set.into_iter().collect(),
                })
                .collect(),
            quantitative: quant_keys
                .iter()
                .zip(values)
                .map(|(k, v)| {
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
                    QuantStats {
                        key: k.to_string(),
                        mean,
                        std: var.sqrt(),
                    }
                })
                .collect(),
            text_keys: TEXT_KEYS
                .into_iter()
                .filter(|k| !exclude.text.iter().any(|e| e == k))
                .map(str::to_string)
                .collect(),
        })
    }

    /// Σ (categories + 1) over qualitative keys.
    pub fn qual_onehot_dim(&self) -> usize {
        self.qualitative
            .iter()
            .map(|c| c.categories.len() + 1)
            .sum()
    }

    pub fn quant_dim(&self) -> usize {
        self.quantitative.len()
    }

    /// Concatenated one-hot blocks; unseen values go to each block's last
    /// (UNKNOWN) slot.
    pub fn encode_qualitative(&self, r: &AdRecord) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.qual_onehot_dim()];
        let mut offset = 0;
        for c in &self.qualitative {
            let v = r.qualitative_value(&c.key)?;
            let slot = c
                .categories
                .binary_search_by(|x| x.as_str().cmp(v))
                .unwrap_or(c.categories.len());
            out[offset + slot] = 1.0;
            offset += c.categories.len() + 1;
        }
        Ok(out)
    }

    pub fn encode_quantitative(&self, r: &AdRecord, prenormalize: bool) -> Result<Vec<f64>> {
        self.quantitative
            .iter()
            .map(|q| {
                let x = r.quantitative_value(&q.key)?;
                Ok(if prenormalize {
                    (x - q.mean) / q.std.max(STD_GUARD)
                } else {
                    x
                })
            })
            .collect()
    }

    /// Rows of a full text-embedding matrix to keep, in order.
    pub fn text_rows(&self) -> Vec<usize> {
        self.text_keys
            .iter()
            .filter_map(|k| TEXT_KEYS.iter().position(|t| t == k))
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("vocab serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: Self = serde_json::from_str(&text)?;
        for c in &vocab.qualitative {
            if c.categories.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::corrupt(
                    path,
                    format!("categories of `{}` are not sorted and unique", c.key),
                ));
            }
        }
        Ok(vocab)
    }
}
