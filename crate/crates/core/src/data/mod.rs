//! Records, manifests, embedding files, filtering, splitting, encoding and
//! the synthetic corpus generator.

mod ctr;
mod dataset;
mod embedding;
mod filter;
mod manifest;
mod prepare;
mod record;
mod split;
mod synth;
mod vocab;

pub use ctr::{compute_ctr, inverse_transform, log_transform_ctr};
pub use dataset::{
    encode_record, encode_records, frame_variant_path, read_text_embedding, EmbeddingStore,
    EncodeOptions, EncodedAd,
};
pub use embedding::{
    decode_embedding, encode_embedding, load_embedding, read_embedding, write_embedding,
    write_embedding_matrix, EMBED_MAGIC, EMBED_VERSION,
};
pub use filter::{
    check_record, filter_records, FilterOutcome, FilterRule, MAX_DURATION_S, MIN_CLICKS,
    MIN_DURATION_S, MIN_IMPRESSIONS_EXCLUSIVE,
};
pub use manifest::{read_manifest, resolve_ref, write_manifest};
pub use prepare::{EncodedSplit, SplitCorpus};
pub use record::{AdRecord, QUALITATIVE_KEYS, QUANTITATIVE_KEYS, TEXT_KEYS};
pub use split::{check_split, split_chronological_grouped, DatasetSplit, SplitPart, SplitRatios};
pub use synth::{generate_synthetic, GroundTruth, SynthConfig, PLANTED_KEY};
pub use vocab::{CategoryList, EncoderVocab, FeatureExclusions, QuantStats, STD_GUARD};
