use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Modality, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{
    attention_pool, dropout_forward, l2_normalize, BatchMoments, BatchNormCache, DropoutMask,
    Matrix, Mode, NORM_EPSILON,
};

/// Model inputs for one ad, already encoded.
#[derive(Debug, Clone, Copy)]
pub struct AdFeatures<'a> {
    /// `n_frames × frame_embed_dim`
    pub frames: &'a Matrix,
    /// Concatenated one-hot blocks.
    pub qualitative: &'a [f64],
    pub quantitative: &'a [f64],
    /// `k × text_embed_dim`, one row per text field.
    pub texts: &'a Matrix,
}

/// Identifies a batch-norm layer for running-statistic updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnSlot {
    Frame,
    Qual,
    Quant,
    Meta,
    MetaJoint,
    Text,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Multiplies each branch output (visual, meta, text) before fusion.
    /// Only useful for probing the scale invariance of the fusion step.
    pub branch_scale: [f64; 3],
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            branch_scale: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum BranchCache {
    Visual {
        stacked: Matrix,
        bn: Option<BatchNormCache>,
        /// Frame features after projection (and BN), the pooled items.
        items: Matrix,
        weights: Vec<Vec<f64>>,
    },
    MetaSeparated {
        qual: Matrix,
        quant: Matrix,
        qual_bn: BatchNormCache,
        quant_bn: BatchNormCache,
        concat: Matrix,
        meta_bn: BatchNormCache,
    },
    MetaJoint {
        joint: Matrix,
        bn: Option<BatchNormCache>,
    },
    Text {
        summed: Matrix,
        bn: Option<BatchNormCache>,
    },
}

/// Output of one modality branch for a batch.
#[derive(Debug, Clone)]
pub struct BranchOutput {
    /// `batch × modal_dim`
    pub features: Matrix,
    /// Per-ad frame attention weights (visual branch only).
    pub frame_weights: Option<Vec<Vec<f64>>>,
    pub moments: Vec<(BnSlot, BatchMoments)>,
    /// Backward state; present in train mode only.
    pub(crate) cache: Option<BranchCache>,
}

fn bn_apply(
    params: &ModelParams,
    slot: BnSlot,
    x: &Matrix,
    mode: Mode,
    moments: &mut Vec<(BnSlot, BatchMoments)>,
) -> Result<(Matrix, Option<BatchNormCache>)> {
    let (out, extra) = params.bn(slot).forward(x, mode)?;
    Ok(match extra {
        Some((cache, m)) => {
            moments.push((slot, m));
            (out, Some(cache))
        }
        None => (out, None),
    })
}

/// Per-frame projection, optional BN, then attention pooling over frames.
/// BN statistics are taken over all `batch × n_frames` frame rows.
pub fn visual_branch(params: &ModelParams, frames: &[&Matrix], mode: Mode) -> Result<BranchOutput> {
    let c = &params.config;
    if frames.is_empty() {
        return Err(Error::EmptyInput("visual_branch"));
    }
    for f in frames {
        if f.shape() != (c.n_frames, c.frame_embed_dim) {
            return Err(Error::shape(
                "visual_branch frames",
                format!("{}x{}", c.n_frames, c.frame_embed_dim),
                format!("{}x{}", f.rows(), f.cols()),
            ));
        }
    }
    let stacked = Matrix::vstack(frames.iter().copied(), c.frame_embed_dim)?;
    let projected = params.frame_proj.forward(&stacked)?;
    let mut moments = Vec::new();
    let (items, bn) = if c.flags.extra_regularization {
        bn_apply(params, BnSlot::Frame, &projected, mode, &mut moments)?
    } else {
        (projected, None)
    };
    let n = c.n_frames;
    let mut features = Matrix::zeros(frames.len(), c.modal_dim);
    let mut weights = Vec::with_capacity(frames.len());
    for i in 0..frames.len() {
        let pooled = attention_pool(
            &params.frame_attention,
            &items.slice_rows(i * n, (i + 1) * n),
        )?;
        features.row_mut(i).copy_from_slice(&pooled.pooled);
        weights.push(pooled.weights);
    }
    let cache = (mode == Mode::Train).then(|| BranchCache::Visual {
        stacked,
        bn,
        items,
        weights: weights.clone(),
    });
    Ok(BranchOutput {
        features,
        frame_weights: Some(weights),
        moments,
        cache,
    })
}

fn rows_to_matrix(rows: &[&[f64]], width: usize, what: &str) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::shape(what.to_string(), width, r.len()));
        }
        data.extend_from_slice(r);
    }
    Matrix::new(rows.len(), width, data)
}

/// Separated: one-hot → FC → BN and continuous → FC → BN, concatenated
/// (categorical part first) → FC → BN. Joint: concatenated raw inputs →
/// FC → BN (BN only with extra regularisation).
pub fn metadata_branch(
    params: &ModelParams,
    qualitative: &[&[f64]],
    quantitative: &[&[f64]],
    mode: Mode,
) -> Result<BranchOutput> {
    let c = &params.config;
    if qualitative.is_empty() {
        return Err(Error::EmptyInput("metadata_branch"));
    }
    if qualitative.len() != quantitative.len() {
        return Err(Error::shape(
            "metadata_branch batch",
            qualitative.len(),
            quantitative.len(),
        ));
    }
    let qual = rows_to_matrix(
        qualitative,
        c.qual_onehot_dim,
        "metadata_branch qualitative",
    )?;
    let quant = rows_to_matrix(quantitative, c.quant_dim, "metadata_branch quantitative")?;
    let mut moments = Vec::new();
    if c.flags.separate_meta {
        let (q, qual_bn) = bn_apply(
            params,
            BnSlot::Qual,
            &params.qual_proj.forward(&qual)?,
            mode,
            &mut moments,
        )?;
        let (r, quant_bn) = bn_apply(
            params,
            BnSlot::Quant,
            &params.quant_proj.forward(&quant)?,
            mode,
            &mut moments,
        )?;
        let concat = Matrix::hstack(&q, &r)?;
        let (features, meta_bn) = bn_apply(
            params,
            BnSlot::Meta,
            &params.meta_proj.forward(&concat)?,
            mode,
            &mut moments,
        )?;
        let cache = match (qual_bn, quant_bn, meta_bn) {
            (Some(qual_bn), Some(quant_bn), Some(meta_bn)) => Some(BranchCache::MetaSeparated {
                qual,
                quant,
                qual_bn,
                quant_bn,
                concat,
                meta_bn,
            }),
            _ => None,
        };
        Ok(BranchOutput {
            features,
            frame_weights: None,
            moments,
            cache,
        })
    } else {
        let joint = Matrix::hstack(&qual, &quant)?;
        let projected = params.meta_joint_proj.forward(&joint)?;
        let (features, bn) = if c.flags.extra_regularization {
            bn_apply(params, BnSlot::MetaJoint, &projected, mode, &mut moments)?
        } else {
            (projected, None)
        };
        Ok(BranchOutput {
            features,
            frame_weights: None,
            moments,
            cache: (mode == Mode::Train).then_some(BranchCache::MetaJoint { joint, bn }),
        })
    }
}

/// Sums the text-field embeddings of each ad, then FC (→ BN).
pub fn text_branch(params: &ModelParams, texts: &[&Matrix], mode: Mode) -> Result<BranchOutput> {
    let c = &params.config;
    if texts.is_empty() {
        return Err(Error::EmptyInput("text_branch"));
    }
    let mut summed = Matrix::zeros(texts.len(), c.text_embed_dim);
    for (i, t) in texts.iter().enumerate() {
        if t.cols() != c.text_embed_dim {
            return Err(Error::shape(
                "text_branch embeddings",
                c.text_embed_dim,
                t.cols(),
            ));
        }
        summed.row_mut(i).copy_from_slice(&t.column_sums());
    }
    let projected = params.text_proj.forward(&summed)?;
    let mut moments = Vec::new();
    let (features, bn) = if c.flags.extra_regularization {
        bn_apply(params, BnSlot::Text, &projected, mode, &mut moments)?
    } else {
        (projected, None)
    };
    Ok(BranchOutput {
        features,
        frame_weights: None,
        moments,
        cache: (mode == Mode::Train).then_some(BranchCache::Text { summed, bn }),
    })
}

/// Fusion result for one ad.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub fused: Vec<f64>,
    /// Weights over the supplied modalities, in the order given.
    pub weights: Vec<f64>,
    /// The L2-normalised modality vectors, one row each.
    pub normalized: Matrix,
}

/// Normalises each modality vector to unit length and pools them with the
/// modality attention scorer.
pub fn fuse_modalities(params: &ModelParams, vectors: &[&[f64]]) -> Result<Fusion> {
    if vectors.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let d = params.config.modal_dim;
    let mut normalized = Matrix::zeros(vectors.len(), d);
    for (j, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(Error::shape("fuse_modalities", d, v.len()));
        }
        normalized
            .row_mut(j)
            .copy_from_slice(&l2_normalize(v, NORM_EPSILON));
    }
    let pooled = attention_pool(&params.modal_attention, &normalized)?;
    Ok(Fusion {
        fused: pooled.pooled,
        weights: pooled.weights,
        normalized,
    })
}

/// Opaque head state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub(crate) input: Matrix,
    pub(crate) bn: BatchNormCache,
    pub(crate) mask: Option<DropoutMask>,
    /// Input to the output layer.
    pub(crate) dropped: Matrix,
}

/// Predictions, the backward cache (train mode) and the BN batch moments.
pub type HeadOutput = (Vec<f64>, Option<HeadCache>, Vec<(BnSlot, BatchMoments)>);

/// FC → BN → dropout → FC(→1). Returns predictions on the log-CTR scale.
pub fn head_forward<R: Rng + ?Sized>(
    params: &ModelParams,
    fused: &Matrix,
    mode: Mode,
    rng: &mut R,
) -> Result<HeadOutput> {
    let c = &params.config;
    if fused.cols() != c.modal_dim {
        return Err(Error::shape("head input", c.modal_dim, fused.cols()));
    }
    let hidden = params.head_hidden.forward(fused)?;
    let mut moments = Vec::new();
    let (normed, bn) = bn_apply(params, BnSlot::Head, &hidden, mode, &mut moments)?;
    let (dropped, mask) = if c.flags.extra_regularization {
        let (d, m) = dropout_forward(c.dropout_p, &normed, mode, rng)?;
        (d, Some(m))
    } else {
        (normed, None)
    };
    let out = params.head_out.forward(&dropped)?;
    let preds = out.into_vec();
    let cache = bn.map(|bn| HeadCache {
        input: fused.clone(),
        bn,
        mask,
        dropped,
    });
    Ok((preds, cache, moments))
}

#[derive(Debug, Clone)]
pub(crate) struct PassCache {
    pub branches: Vec<(Modality, Option<BranchCache>)>,
    /// Scaled branch outputs that entered the fusion step.
    pub fusion_inputs: Vec<(Modality, Matrix)>,
    pub fusion_items: Vec<Matrix>,
    pub head: HeadCache,
    pub scales: [f64; 3],
}

/// Per-ad view of a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub frame_weights: Option<Vec<f64>>,
    pub modality_weights: Vec<(Modality, f64)>,
    pub prediction: f64,
}

/// Result of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub mode: Mode,
    pub predictions: Vec<f64>,
    pub active: Vec<Modality>,
    pub frame_weights: Option<Vec<Vec<f64>>>,
    /// Per ad, weights over `active` in order.
    pub modality_weights: Vec<Vec<f64>>,
    /// Branch outputs before scaling and normalisation.
    pub branch_features: Vec<(Modality, Matrix)>,
    /// Fused ad vectors, `batch × modal_dim`.
    pub fused: Matrix,
    /// Train-mode batch moments for every BN layer that ran.
    pub moments: Vec<(BnSlot, BatchMoments)>,
    pub(crate) cache: Option<PassCache>,
}

impl ForwardPass {
    pub fn batch_size(&self) -> usize {
        self.predictions.len()
    }

    /// Branches that were actually evaluated.
    pub fn executed_branches(&self) -> Vec<Modality> {
        self.branch_features.iter().map(|(m, _)| *m).collect()
    }

    pub fn traces(&self) -> Vec<ForwardTrace> {
        (0..self.batch_size())
            .map(|i| ForwardTrace {
                frame_weights: self.frame_weights.as_ref().map(|w| w[i].clone()),
                modality_weights: self
                    .active
                    .iter()
                    .copied()
                    .zip(self.modality_weights[i].iter().copied())
                    .collect(),
                prediction: self.predictions[i],
            })
            .collect()
    }
}

/// Full network on a batch. Train mode needs at least two ads (batch norm)
/// and keeps the caches required by [`super::backward`].
pub fn forward<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[AdFeatures<'_>],
    mode: Mode,
    rng: &mut R,
    options: &ForwardOptions,
) -> Result<ForwardPass> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("model forward"));
    }
    let c = &params.config;
    let active = c.active_modalities();
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let mut outputs = Vec::new();
    for &m in &active {
        let out = match m {
            Modality::Visual => {
                let frames: Vec<&Matrix> = batch.iter().map(|a| a.frames).collect();
                visual_branch(params, &frames, mode)?
            }
            Modality::Meta => {
                let qual: Vec<&[f64]> = batch.iter().map(|a| a.qualitative).collect();
                let quant: Vec<&[f64]> = batch.iter().map(|a| a.quantitative).collect();
                metadata_branch(params, &qual, &quant, mode)?
            }
            Modality::Text => {
                let texts: Vec<&Matrix> = batch.iter().map(|a| a.texts).collect();
                text_branch(params, &texts, mode)?
            }
        };
        outputs.push((m, out));
    }

    let scales = options.branch_scale;
    let fusion_inputs: Vec<(Modality, Matrix)> = outputs
        .iter()
        .map(|(m, out)| {
            let mut f = out.features.clone();
            let s = scales[m.index()];
            if s != 1.0 {
                f.scale(s);
            }
            (*m, f)
        })
        .collect();

    let b = batch.len();
    let mut fused = Matrix::zeros(b, c.modal_dim);
    let mut modality_weights = Vec::with_capacity(b);
    let mut fusion_items = Vec::with_capacity(b);
    for i in 0..b {
        let vectors: Vec<&[f64]> = fusion_inputs.iter().map(|(_, f)| f.row(i)).collect();
        let fusion = fuse_modalities(params, &vectors)?;
        fused.row_mut(i).copy_from_slice(&fusion.fused);
        modality_weights.push(fusion.weights);
        fusion_items.push(fusion.normalized);
    }

    let (predictions, head_cache, head_moments) = head_forward(params, &fused, mode, rng)?;

    let mut moments = Vec::new();
    let mut frame_weights = None;
    let mut branch_caches = Vec::new();
    let mut branch_features = Vec::new();
    for (m, out) in outputs {
        moments.extend(out.moments);
        if out.frame_weights.is_some() {
            frame_weights = out.frame_weights;
        }
        branch_caches.push((m, out.cache));
        branch_features.push((m, out.features));
    }
    moments.extend(head_moments);

    let cache = match (mode, head_cache) {
        (Mode::Train, Some(head)) => Some(PassCache {
            branches: branch_caches,
            fusion_inputs,
            fusion_items,
            head,
            scales,
        }),
        _ => None,
    };

    Ok(ForwardPass {
        mode,
        predictions,
        active,
        frame_weights,
        modality_weights,
        branch_features,
        fused,
        moments,
        cache,
    })
}
