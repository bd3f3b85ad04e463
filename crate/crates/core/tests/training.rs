use std::sync::Arc;

use adfusion_core::data::EncodedAd;
use adfusion_core::model::{save_params, AblationFlags, ModelConfig, ModelParams};
use adfusion_core::numerics::Matrix;
use adfusion_core::seed::rng_for;
use adfusion_core::training::{evaluate, train, train_from, Evaluation, TrainConfig};
use adfusion_core::Error;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config(flags: AblationFlags) -> ModelConfig {
    ModelConfig {
        n_frames: 3,
        frame_embed_dim: 6,
        text_embed_dim: 5,
        qual_onehot_dim: 4,
        quant_dim: 2,
        qual_feat_dim: 3,
        quant_feat_dim: 5,
        modal_dim: 8,
        head_hidden_dim: 6,
        flags,
        ..ModelConfig::default()
    }
}

fn matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let v: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::new(rows, cols, v).unwrap()
}

fn random_ad(c: &ModelConfig, i: usize, rng: &mut impl Rng) -> EncodedAd {
    let mut qual = vec![0.0; c.qual_onehot_dim];
    qual[rng.random_range(0..c.qual_onehot_dim)] = 1.0;
    EncodedAd {
        ad_id: format!("ad{i}"),
        frames: Arc::new(matrix(c.n_frames, c.frame_embed_dim, rng)),
        texts: matrix(2, c.text_embed_dim, rng),
        qualitative: qual,
        quantitative: (0..c.quant_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
        target: Some(rng.random_range(0.2..0.8)),
    }
}

fn dataset(c: &ModelConfig, n: usize, seed: u64) -> Vec<EncodedAd> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| random_ad(c, i, &mut rng)).collect()
}

#[test]
fn memorizes_a_duplicated_record() {
    let c = tiny_config(AblationFlags::default());
    let one = dataset(&c, 1, 3).remove(0);
    let train_set: Vec<EncodedAd> = (0..4).map(|_| one.clone()).collect();
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 4,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(c, &cfg, &train_set, &train_set).unwrap();
    let last = out.log.epochs.last().unwrap();
    println!("memorization: final train MSE {:.3e}", last.train_mse);
    assert!(last.train_mse < 1e-3, "train MSE {}", last.train_mse);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let c = tiny_config(AblationFlags::default());
    let data = dataset(&c, 24, 5);
    let (tr, va) = data.split_at(18);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 5,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train(c.clone(), &cfg, tr, va).unwrap();
    let b = train(c, &cfg, tr, va).unwrap();
    assert_eq!(a.log, b.log);

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.afpm"), dir.path().join("b.afpm"));
    save_params(&a.best, &pa).unwrap();
    save_params(&b.best, &pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());

    let other = train(
        a.best.config.clone(),
        &TrainConfig { seed: 12, ..cfg },
        tr,
        va,
    )
    .unwrap();
    assert_ne!(other.log, a.log);
}

#[test]
fn zero_learning_rate_is_a_null_update() {
    let c = tiny_config(AblationFlags::default());
    let data = dataset(&c, 20, 8);
    let (tr, va) = data.split_at(15);
    let init = ModelParams::init(c, &mut rng_for(0, "init", 0)).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        learning_rate: 0.0,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let out = train_from(init.clone(), &cfg, tr, va, |_| {}).unwrap();
    assert_eq!(out.last.flat_state(), init.flat_state());
    assert_eq!(out.last.flat_learnable(), init.flat_learnable());
    let first = out.log.epochs[0].valid_mse;
    assert!(out.log.epochs.iter().all(|e| e.valid_mse == first));
    // All epochs tie; the earliest wins.
    assert_eq!(out.log.best_epoch, 1);
}

#[test]
fn best_epoch_is_the_earliest_minimum() {
    let c = tiny_config(AblationFlags::default());
    let data = dataset(&c, 30, 9);
    let (tr, va) = data.split_at(24);
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 6,
        learning_rate: 0.02,
        ..TrainConfig::default()
    };
    let out = train(c, &cfg, tr, va).unwrap();
    let min = out
        .log
        .epochs
        .iter()
        .map(|e| e.valid_mse)
        .fold(f64::INFINITY, f64::min);
    let first_min = out.log.epochs.iter().find(|e| e.valid_mse == min).unwrap();
    assert_eq!(out.log.best_epoch, first_min.epoch);
    assert_eq!(out.log.best_valid_mse, min);
    // The returned best parameters reproduce the logged validation MSE.
    assert_eq!(evaluate(&out.best, va).unwrap().mse, min);
}

#[test]
fn evaluation_does_not_touch_parameters() {
    let c = tiny_config(AblationFlags::default());
    let data = dataset(&c, 10, 4);
    let p = ModelParams::init(c, &mut rng_for(2, "init", 0)).unwrap();
    let (learn, state) = (p.flat_learnable(), p.flat_state());
    let a = evaluate(&p, &data).unwrap();
    let b = evaluate(&p, &data).unwrap();
    assert_eq!(p.flat_learnable(), learn);
    assert_eq!(p.flat_state(), state);
    assert_eq!(a.rows, b.rows);
}

#[test]
fn small_lr_loss_is_mostly_non_increasing() {
    // Full-batch steps without dropout; the epoch loss is measured before
    // each epoch's update.
    let flags = AblationFlags {
        extra_regularization: false,
        ..AblationFlags::default()
    };
    let c = tiny_config(flags);
    let mut monotone = 0;
    for seed in 0..20u64 {
        let data = dataset(&c, 12, 100 + seed);
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 12,
            seed,
            ..TrainConfig::default()
        };
        let out = train(c.clone(), &cfg, &data, &data).unwrap();
        let losses: Vec<f64> = out.log.epochs.iter().map(|e| e.train_mse).collect();
        if losses.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    println!("non-increasing runs: {monotone}/20");
    assert!(
        monotone >= 19,
        "only {monotone}/20 runs were non-increasing"
    );
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let c = tiny_config(AblationFlags::default());
    let data = dataset(&c, 16, 6);
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 1e6,
        batch_size: 4,
        ..TrainConfig::default()
    };
    match train(c, &cfg, &data, &data) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn rejects_bad_inputs() {
    let c = tiny_config(AblationFlags::default());
    let data = dataset(&c, 6, 7);
    let cfg = TrainConfig::default();
    assert!(train(c.clone(), &cfg, &data[..1], &data).is_err());
    assert!(train(c.clone(), &cfg, &data, &[]).is_err());
    let bad = TrainConfig {
        batch_size: 1,
        ..TrainConfig::default()
    };
    assert!(train(c.clone(), &bad, &data, &data).is_err());
    let mut unlabeled = data.clone();
    unlabeled[2].target = None;
    assert!(train(c, &cfg, &unlabeled, &data).is_err());
}

#[test]
fn metric_examples() {
    let ids = ["a", "b", "c"];
    let t = [0.0, 1.0, 2.0];
    let same = Evaluation::from_predictions(&ids, &t, &t).unwrap();
    assert_eq!(same.rmse, 0.0);
    assert!((same.pearson_r.unwrap() - 1.0).abs() < 1e-12);

    let neg: Vec<f64> = t.iter().map(|v| -v).collect();
    let anti = Evaluation::from_predictions(&ids, &t, &neg).unwrap();
    assert!((anti.pearson_r.unwrap() + 1.0).abs() < 1e-12);

    // Independent evaluation of the formulas for the worked example.
    let p = [0.1, 0.9, 2.3];
    let e = Evaluation::from_predictions(&ids, &t, &p).unwrap();
    let rmse = ((0.01 + 0.01 + 0.09) / 3.0f64).sqrt();
    let (mp, mt) = (3.3 / 3.0, 1.0);
    let dp: Vec<f64> = p.iter().map(|v| v - mp).collect();
    let dt: Vec<f64> = t.iter().map(|v| v - mt).collect();
    let sxy: f64 = dp.iter().zip(&dt).map(|(a, b)| a * b).sum();
    let sxx: f64 = dp.iter().map(|a| a * a).sum();
    let syy: f64 = dt.iter().map(|a| a * a).sum();
    assert!((e.rmse - rmse).abs() < 1e-12);
    assert!((e.pearson_r.unwrap() - sxy / (sxx * syy).sqrt()).abs() < 1e-12);
    assert_eq!(e.rows[2].ad_id, "c");
    assert!(e.rows[2].raw_ctr_prediction > 0.0);

    let flat = Evaluation::from_predictions(&ids, &t, &[0.5; 3]).unwrap();
    assert!(flat.pearson_r.is_none());
    assert!(flat.rmse > 0.0);
}
