use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::evaluate::evaluate;
use super::TrainConfig;
use crate::data::EncodedAd;
use crate::error::{Error, Result};
use crate::model::{backward, forward, ForwardOptions, ModelConfig, ModelParams};
use crate::numerics::{mse_grad, mse_loss, Mode, SgdMomentum};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean train-mode loss over the epoch's minibatches, weighted by batch
    /// size.
    pub train_mse: f64,
    /// Infer-mode MSE on the validation set after the epoch.
    pub valid_mse: f64,
}

/// Deterministic record of a run; wall-clock times are kept separately so
/// identical runs produce identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_config: TrainConfig,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid_mse: f64,
    #[serde(default)]
    pub best_params_ref: Option<PathBuf>,
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for e in &self.epochs {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Everything except the per-epoch rows.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            train_config: &'a TrainConfig,
            n_epochs: usize,
            best_epoch: usize,
            best_valid_mse: f64,
            best_params_ref: &'a Option<PathBuf>,
        }
        let s = Summary {
            train_config: &self.train_config,
            n_epochs: self.epochs.len(),
            best_epoch: self.best_epoch,
            best_valid_mse: self.best_valid_mse,
            best_params_ref: &self.best_params_ref,
        };
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, &s)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the lowest validation MSE.
    pub best: ModelParams,
    /// Parameters after the final epoch.
    pub last: ModelParams,
    pub log: TrainLog,
    pub epoch_seconds: Vec<f64>,
}

/// Splits `order` into minibatches of `batch_size`. A trailing batch with a
/// single element is merged into the previous one so every batch has at
/// least two rows.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(tail);
    }
    out
}

/// Initializes parameters from `train_config.seed` and trains.
pub fn train(
    model_config: ModelConfig,
    train_config: &TrainConfig,
    train_set: &[EncodedAd],
    valid_set: &[EncodedAd],
) -> Result<TrainOutcome> {
    let params = ModelParams::init(model_config, &mut rng_for(train_config.seed, "init", 0))?;
    train_from(params, train_config, train_set, valid_set, |_| {})
}

/// Trains from the given parameters. `on_epoch` sees each epoch's log line
/// as soon as it is available. With `learning_rate == 0` nothing is updated,
/// including batch-norm running statistics.
pub fn train_from(
    mut params: ModelParams,
    cfg: &TrainConfig,
    train_set: &[EncodedAd],
    valid_set: &[EncodedAd],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training records, got {}",
            train_set.len()
        )));
    }
    if valid_set.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let targets: Vec<f64> = train_set
        .iter()
        .map(|a| {
            a.target
                .ok_or_else(|| Error::InvalidArgument(format!("ad {} has no label", a.ad_id)))
        })
        .collect::<Result<_>>()?;

    let mut opt = SgdMomentum::new(cfg.learning_rate, cfg.momentum)?;
    // A zero learning rate is a null update: batch-norm running statistics
    // are left alone too, so the model is exactly the one passed in.
    let frozen = cfg.learning_rate == 0.0;
    let opts = ForwardOptions::default();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut seconds = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut rng_for(cfg.seed, "shuffle", epoch as u64));
        }
        let mut dropout_rng = rng_for(cfg.seed, "dropout", epoch as u64);
        let mut loss_sum = 0.0;
        for (step, batch) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let feats: Vec<_> = batch.iter().map(|&i| train_set[i].features()).collect();
            let y: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let pass = forward(&params, &feats, Mode::Train, &mut dropout_rng, &opts)?;
            let loss = mse_loss(&pass.predictions, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: step + 1,
                    loss,
                });
            }
            loss_sum += loss * batch.len() as f64;
            let grad = mse_grad(&pass.predictions, &y)?;
            let grads = backward(&params, &pass, &grad)?;
            let g = grads.slices();
            opt.step(params.learnable_slices_mut(), g)?;
            if !frozen {
                params.apply_moments(&pass.moments);
            }
        }
        let valid_mse = evaluate(&params, valid_set)?.mse;
        if !valid_mse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: 0,
                loss: valid_mse,
            });
        }
        let line = EpochLog {
            epoch,
            train_mse: loss_sum / train_set.len() as f64,
            valid_mse,
        };
        on_epoch(&line);
        epochs.push(line);
        seconds.push(started.elapsed().as_secs_f64());
        // Strict comparison keeps the earliest epoch on ties.
        if best.as_ref().is_none_or(|(_, m, _)| valid_mse < *m) {
            best = Some((epoch, valid_mse, params.clone()));
        }
    }

    let (best_epoch, best_valid_mse, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: best_params,
        last: params,
        log: TrainLog {
            train_config: cfg.clone(),
            epochs,
            best_epoch,
            best_valid_mse,
            best_params_ref: None,
        },
        epoch_seconds: seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(&order, 3);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3]);
        let b = batches(&order[..6], 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 2]);
        assert_eq!(batches(&order[..3], 256), vec![vec![0, 1, 2]]);
    }
}
