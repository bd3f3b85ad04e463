use super::forward::{BranchCache, ForwardPass};
use super::{Modality, ModelGrads, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{attention_pool_backward, l2_normalize_backward, Matrix, NORM_EPSILON};

/// Gradients of all parameters given `d loss / d prediction` for each ad of
/// a train-mode forward pass.
///
/// Parameters of inactive branches (and of layers switched off by the
/// ablation flags) receive exactly zero gradient.
pub fn backward(params: &ModelParams, pass: &ForwardPass, grad_pred: &[f64]) -> Result<ModelGrads> {
    let cache = pass
        .cache
        .as_ref()
        .ok_or_else(|| Error::MissingCache("forward pass was not run in train mode".into()))?;
    let b = pass.batch_size();
    if grad_pred.len() != b {
        return Err(Error::shape(
            "backward prediction gradient",
            b,
            grad_pred.len(),
        ));
    }
    let c = &params.config;
    let mut grads = ModelGrads::zeros(c);

    // Head: out ← dropout ← BN ← hidden.
    let head = &cache.head;
    let grad_out = Matrix::new(b, 1, grad_pred.to_vec())?;
    let (grad_dropped, g) = params.head_out.backward(&head.dropped, &grad_out)?;
    grads.head_out = g;
    let grad_normed = match &head.mask {
        Some(mask) => mask.backward(&grad_dropped)?,
        None => grad_dropped,
    };
    let (grad_hidden, g) = params.head_bn.backward(&head.bn, &grad_normed)?;
    grads.head_bn = g;
    let (grad_fused, g) = params.head_hidden.backward(&head.input, &grad_hidden)?;
    grads.head_hidden = g;

    // Fusion: attention over normalised modality vectors, per ad.
    let mut branch_grads: Vec<(Modality, Matrix)> = cache
        .fusion_inputs
        .iter()
        .map(|(m, f)| (*m, Matrix::zeros(f.rows(), f.cols())))
        .collect();
    for i in 0..b {
        let items = &cache.fusion_items[i];
        let grad_items = attention_pool_backward(
            &params.modal_attention,
            items,
            &pass.modality_weights[i],
            grad_fused.row(i),
            &mut grads.modal_attention,
        )?;
        for (j, (m, input)) in cache.fusion_inputs.iter().enumerate() {
            let dv =
                l2_normalize_backward(input.row(i), items.row(j), grad_items.row(j), NORM_EPSILON);
            let scale = cache.scales[m.index()];
            let target = branch_grads[j].1.row_mut(i);
            for (t, d) in target.iter_mut().zip(dv) {
                *t = d * scale;
            }
        }
    }

    for ((m, branch), (gm, grad)) in cache.branches.iter().zip(&branch_grads) {
        debug_assert_eq!(m, gm);
        let branch = branch
            .as_ref()
            .ok_or_else(|| Error::MissingCache(format!("{} branch", m.name())))?;
        branch_backward(params, branch, grad, &mut grads)?;
    }
    Ok(grads)
}

fn branch_backward(
    params: &ModelParams,
    cache: &BranchCache,
    grad: &Matrix,
    grads: &mut ModelGrads,
) -> Result<()> {
    match cache {
        BranchCache::Visual {
            stacked,
            bn,
            items,
            weights,
        } => {
            let n = params.config.n_frames;
            let mut grad_items = Matrix::zeros(items.rows(), items.cols());
            for (i, w) in weights.iter().enumerate() {
                let ad_items = items.slice_rows(i * n, (i + 1) * n);
                let gi = attention_pool_backward(
                    &params.frame_attention,
                    &ad_items,
                    w,
                    grad.row(i),
                    &mut grads.frame_attention,
                )?;
                for r in 0..n {
                    grad_items.row_mut(i * n + r).copy_from_slice(gi.row(r));
                }
            }
            let grad_proj = match bn {
                Some(bn) => {
                    let (gx, g) = params.frame_bn.backward(bn, &grad_items)?;
                    grads.frame_bn = g;
                    gx
                }
                None => grad_items,
            };
            // Frame embeddings are data; no input gradient needed.
            grads.frame_proj = params.frame_proj.backward_params(stacked, &grad_proj)?;
        }
        BranchCache::MetaSeparated {
            qual,
            quant,
            qual_bn,
            quant_bn,
            concat,
            meta_bn,
        } => {
            let (g_meta, g) = params.meta_bn.backward(meta_bn, grad)?;
            grads.meta_bn = g;
            let (g_concat, g) = params.meta_proj.backward(concat, &g_meta)?;
            grads.meta_proj = g;
            let (g_qual, g_quant) = g_concat.hsplit(params.config.qual_feat_dim);
            let (g_q, g) = params.qual_bn.backward(qual_bn, &g_qual)?;
            grads.qual_bn = g;
            grads.qual_proj = params.qual_proj.backward_params(qual, &g_q)?;
            let (g_r, g) = params.quant_bn.backward(quant_bn, &g_quant)?;
            grads.quant_bn = g;
            grads.quant_proj = params.quant_proj.backward_params(quant, &g_r)?;
        }
        BranchCache::MetaJoint { joint, bn } => {
            let g_proj = match bn {
                Some(bn) => {
                    let (gx, g) = params.meta_joint_bn.backward(bn, grad)?;
                    grads.meta_joint_bn = g;
                    gx
                }
                None => grad.clone(),
            };
            grads.meta_joint_proj = params.meta_joint_proj.backward_params(joint, &g_proj)?;
        }
        BranchCache::Text { summed, bn } => {
            let g_proj = match bn {
                Some(bn) => {
                    let (gx, g) = params.text_bn.backward(bn, grad)?;
                    grads.text_bn = g;
                    gx
                }
                None => grad.clone(),
            };
            grads.text_proj = params.text_proj.backward_params(summed, &g_proj)?;
        }
    }
    Ok(())
}
