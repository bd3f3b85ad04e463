use std::path::{Path, PathBuf};

use super::{
    encode_records, filter_records, read_manifest, split_chronological_grouped, AdRecord,
    DatasetSplit, EmbeddingStore, EncodeOptions, EncodedAd, EncoderVocab, FeatureExclusions,
    FilterRule, SplitRatios,
};
use crate::error::Result;

/// A filtered, split manifest. Indices in `split` refer to `records`.
#[derive(Debug, Clone)]
pub struct SplitCorpus {
    /// Directory embedding references are resolved against.
    pub base_dir: PathBuf,
    pub records: Vec<AdRecord>,
    pub rejected: Vec<(String, FilterRule)>,
    pub split: DatasetSplit,
}

impl SplitCorpus {
    pub fn load(manifest: &Path, ratios: SplitRatios) -> Result<Self> {
        let base_dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let outcome = filter_records(read_manifest(manifest)?);
        let split = split_chronological_grouped(&outcome.kept, ratios)?;
        Ok(Self {
            base_dir,
            records: outcome.kept,
            rejected: outcome
                .rejected
                .into_iter()
                .map(|(r, rule)| (r.ad_id, rule))
                .collect(),
            split,
        })
    }

    pub fn part(&self, idx: &[usize]) -> Vec<&AdRecord> {
        idx.iter().map(|&i| &self.records[i]).collect()
    }

    /// Builds the vocabulary on the train part and encodes all three parts.
    pub fn encode(
        &self,
        exclusions: &FeatureExclusions,
        opts: &EncodeOptions,
        store: &EmbeddingStore,
    ) -> Result<EncodedSplit> {
        let train_records = self.part(&self.split.train);
        let vocab = EncoderVocab::build(train_records.iter().copied(), exclusions)?;
        let enc =
            |idx: &[usize]| encode_records(&self.part(idx), &self.base_dir, &vocab, opts, store);
        Ok(EncodedSplit {
            train: enc(&self.split.train)?,
            valid: enc(&self.split.valid)?,
            test: enc(&self.split.test)?,
            vocab,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncodedSplit {
    pub vocab: EncoderVocab,
    pub train: Vec<EncodedAd>,
    pub valid: Vec<EncodedAd>,
    pub test: Vec<EncodedAd>,
}
