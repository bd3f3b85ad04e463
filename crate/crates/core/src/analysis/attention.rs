use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::EncodedAd;
use crate::error::{Error, Result};
use crate::model::{Modality, ModelParams};
use crate::training::predict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub ad_id: String,
    /// `None` when the visual branch is inactive.
    pub frame_weights: Option<Vec<f64>>,
    /// Aligned with [`AttentionReport::modalities`].
    pub modality_weights: Vec<f64>,
}

/// Per-ad frame and modality attention plus their dataset means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub modalities: Vec<Modality>,
    pub n_frames: Option<usize>,
    pub frame_means: Option<Vec<f64>>,
    pub modality_means: Vec<f64>,
    pub rows: Vec<AttentionRow>,
}

fn column_means<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Vec<f64> {
    let mut sums = vec![0.0; width];
    let mut n = 0usize;
    for r in rows {
        for (s, v) in sums.iter_mut().zip(r) {
            *s += v;
        }
        n += 1;
    }
    sums.into_iter().map(|s| s / n.max(1) as f64).collect()
}

/// Infer-mode attention weights for every ad in `ads`.
pub fn collect_attention(params: &ModelParams, ads: &[EncodedAd]) -> Result<AttentionReport> {
    if ads.is_empty() {
        return Err(Error::EmptyInput("collect_attention"));
    }
    let traces = predict(params, ads)?;
    let modalities: Vec<Modality> = traces[0].modality_weights.iter().map(|(m, _)| *m).collect();
    let rows: Vec<AttentionRow> = ads
        .iter()
        .zip(traces)
        .map(|(a, t)| AttentionRow {
            ad_id: a.ad_id.clone(),
            frame_weights: t.frame_weights,
            modality_weights: t.modality_weights.into_iter().map(|(_, w)| w).collect(),
        })
        .collect();
    let n_frames = rows[0].frame_weights.as_ref().map(Vec::len);
    let frame_means =
        n_frames.map(|n| column_means(rows.iter().filter_map(|r| r.frame_weights.as_deref()), n));
    let modality_means = column_means(
        rows.iter().map(|r| r.modality_weights.as_slice()),
        modalities.len(),
    );
    Ok(AttentionReport {
        modalities,
        n_frames,
        frame_means,
        modality_means,
        rows,
    })
}

impl AttentionReport {
    /// `ad_id,frame_1,…,frame_n`; one row per ad, suitable for stacked bars.
    /// Returns `false` without writing when there are no frame weights.
    pub fn write_frame_csv(&self, path: &Path) -> Result<bool> {
        let Some(n) = self.n_frames else {
            return Ok(false);
        };
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["ad_id".to_string()];
        header.extend((1..=n).map(|i| format!("frame_{i}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.ad_id.clone()];
            if let Some(fw) = &r.frame_weights {
                rec.extend(fw.iter().map(f64::to_string));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(true)
    }

    /// `ad_id,<modality>…` over the active modalities.
    pub fn write_modality_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["ad_id".to_string()];
        header.extend(self.modalities.iter().map(|m| m.name().to_string()));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.ad_id.clone()];
            rec.extend(r.modality_weights.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Means only, as JSON.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            n_ads: usize,
            n_frames: Option<usize>,
            frame_means: &'a Option<Vec<f64>>,
            modality_means: Vec<(&'static str, f64)>,
        }
        let s = Summary {
            n_ads: self.rows.len(),
            n_frames: self.n_frames,
            frame_means: &self.frame_means,
            modality_means: self
                .modalities
                .iter()
                .map(|m| m.name())
                .zip(self.modality_means.iter().copied())
                .collect(),
        };
        let text = serde_json::to_string_pretty(&s)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
