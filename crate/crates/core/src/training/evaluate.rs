use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::pearson;
use crate::data::{inverse_transform, EncodedAd};
use crate::error::{Error, Result};
use crate::model::{forward, ForwardOptions, ForwardTrace, ModelParams};
use crate::numerics::{mse_loss, Mode};

/// Chunk size for inference; infer mode has no batch-size constraint.
pub const INFER_BATCH: usize = 256;

/// Infer-mode forward over `ads`, chunked. Never touches the parameters.
pub fn predict(params: &ModelParams, ads: &[EncodedAd]) -> Result<Vec<ForwardTrace>> {
    let chunks: Vec<Vec<ForwardTrace>> = ads
        .par_chunks(INFER_BATCH)
        .map(|chunk| {
            let feats: Vec<_> = chunk.iter().map(EncodedAd::features).collect();
            // Infer mode draws nothing from the generator.
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let pass = forward(
                params,
                &feats,
                Mode::Infer,
                &mut rng,
                &ForwardOptions::default(),
            )?;
            Ok(pass.traces())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub ad_id: String,
    pub target: f64,
    pub prediction: f64,
    pub raw_ctr_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub mse: f64,
    pub rmse: f64,
    /// `None` when predictions or targets are constant.
    pub pearson_r: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<PredictionRow>,
}

/// RMSE and Pearson R between predictions and log-CTR targets.
pub fn evaluate(params: &ModelParams, ads: &[EncodedAd]) -> Result<Evaluation> {
    let targets: Vec<f64> = ads
        .iter()
        .map(|a| {
            a.target
                .ok_or_else(|| Error::InvalidArgument(format!("ad {} has no label", a.ad_id)))
        })
        .collect::<Result<_>>()?;
    let preds: Vec<f64> = predict(params, ads)?
        .into_iter()
        .map(|t| t.prediction)
        .collect();
    let ids: Vec<&str> = ads.iter().map(|a| a.ad_id.as_str()).collect();
    Evaluation::from_predictions(&ids, &targets, &preds)
}

impl Evaluation {
    /// Metrics for given predictions. R is `None` for fewer than two rows or
    /// a constant vector.
    pub fn from_predictions(ad_ids: &[&str], targets: &[f64], preds: &[f64]) -> Result<Self> {
        if ad_ids.len() != targets.len() {
            return Err(Error::shape("evaluation ids", targets.len(), ad_ids.len()));
        }
        let mse = mse_loss(preds, targets)?;
        let pearson_r = if targets.len() >= 2 {
            pearson(preds, targets)?
        } else {
            None
        };
        let rows = ad_ids
            .iter()
            .zip(targets.iter().zip(preds))
            .map(|(id, (&t, &p))| PredictionRow {
                ad_id: id.to_string(),
                target: t,
                prediction: p,
                raw_ctr_prediction: inverse_transform(p),
            })
            .collect();
        Ok(Self {
            n: targets.len(),
            mse,
            rmse: mse.sqrt(),
            pearson_r,
            rows,
        })
    }
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
