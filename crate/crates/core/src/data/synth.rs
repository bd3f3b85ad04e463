//! Synthetic corpus with planted structure, standing in for real ad logs.
//!
//! The log-odds of a click are
//! `base + q_coef·q_video + effect[promotion_id] + Σ γ_k·z(quant_k) + t_coef·t_ad + ε`,
//! where `q_video` is written into every frame of the video along a fixed
//! direction, most strongly into the first, and `t_ad` into every text row along per-field
//! directions. Only `promotion_id` among the categorical keys carries an
//! effect.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_embedding, write_manifest, AdRecord, QUALITATIVE_KEYS, TEXT_KEYS};
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const PLANTED_KEY: &str = "promotion_id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_ads: usize,
    pub n_videos: usize,
    pub n_frames: usize,
    pub frame_dim: usize,
    pub text_dim: usize,
    /// Additional frame counts written as `<video>.n{n}.afeb` variants.
    #[serde(default)]
    pub extra_frame_counts: Vec<usize>,
    pub n_promotions: usize,
    pub base_logit: f64,
    pub quality_coef: f64,
    /// Amplitude of the quality direction in the first frame.
    pub first_frame_quality_gain: f64,
    /// Amplitude of the quality direction in every later frame.
    pub other_frame_quality_gain: f64,
    /// Amplitude of the per-video content factors shared by all frames.
    pub content_scale: f64,
    pub promotion_effect_std: f64,
    pub text_coef: f64,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_ads: 2000,
            n_videos: 600,
            n_frames: 15,
            frame_dim: 2048,
            text_dim: 300,
            extra_frame_counts: vec![10, 20],
            n_promotions: 10,
            base_logit: -3.9,
            quality_coef: 0.55,
            first_frame_quality_gain: 3.0,
            other_frame_quality_gain: 1.0,
            content_scale: 1.0,
            promotion_effect_std: 0.7,
            text_coef: 0.2,
            noise_std: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_videos == 0 || self.n_ads == 0 {
            return bad("n_ads and n_videos must be positive".into());
        }
        if self.n_videos > self.n_ads {
            return bad(format!(
                "n_videos ({}) must not exceed n_ads ({})",
                self.n_videos, self.n_ads
            ));
        }
        if self.n_frames == 0 || self.extra_frame_counts.contains(&0) {
            return bad("frame counts must be positive".into());
        }
        if self.frame_dim < 4 || self.text_dim < 1 || self.n_promotions == 0 {
            return bad("frame_dim ≥ 4, text_dim ≥ 1 and n_promotions ≥ 1 required".into());
        }
        Ok(())
    }
}

/// Planted parameters, written next to the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub config: SynthConfig,
    pub planted_key: String,
    pub promotion_effects: BTreeMap<String, f64>,
    pub quant_coefs: BTreeMap<String, f64>,
    pub video_quality: BTreeMap<String, f64>,
    /// Noise-free click probability per ad.
    pub true_ctr: BTreeMap<String, f64>,
}

/// Other categorical keys and their category counts; none affects CTR.
const NUISANCE_CARDINALITY: [usize; 11] = [3, 2, 6, 5, 2, 4, 3, 4, 3, 2, 3];

const N_FACTORS: usize = 6;
const FRAME_NOISE: f64 = 0.3;
const TEXT_NOISE: f64 = 0.05;

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn unit_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let v = normal_vec(rng, n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

struct Video {
    id: String,
    created: DateTime<Utc>,
    duration_s: f64,
    quality: f64,
    coefs: [f64; N_FACTORS],
    drift: [f64; N_FACTORS],
}

struct Directions {
    factors: Vec<Vec<f64>>,
    quality: Vec<f64>,
    first_frame: Vec<f64>,
    text: Vec<Vec<f64>>,
}

/// Frame `t` of `n` samples the video at relative time `(t + 0.5) / n`.
/// Every frame carries the quality direction; the first frame carries it
/// most strongly, plus a fixed marker.
fn video_frames(
    v: &Video,
    dirs: &Directions,
    cfg: &SynthConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let dim = cfg.frame_dim;
    // Per-element scale ~1 for the structured part.
    let scale = (dim as f64).sqrt();
    let mut out = Vec::with_capacity(n * dim);
    for t in 0..n {
        let tau = (t as f64 + 0.5) / n as f64;
        let mut row = vec![0.0; dim];
        for k in 0..N_FACTORS {
            let a =
                cfg.content_scale * (v.coefs[k] + v.drift[k] * (std::f64::consts::TAU * tau).sin());
            for (x, d) in row.iter_mut().zip(&dirs.factors[k]) {
                *x += a * d * scale;
            }
        }
        let (gain, marker) = if t == 0 {
            (cfg.first_frame_quality_gain, 1.0)
        } else {
            (cfg.other_frame_quality_gain, 0.0)
        };
        for ((x, dq), d1) in row.iter_mut().zip(&dirs.quality).zip(&dirs.first_frame) {
            *x += (gain * v.quality * dq + marker * d1) * scale;
        }
        for x in &mut row {
            *x += FRAME_NOISE * normal(rng);
        }
        out.extend(row.into_iter().map(|x| x as f32));
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Writes `manifest.jsonl`, `frames/`, `texts/` and `ground_truth.json`
/// under `out_dir`. Identical seeds give byte-identical trees.
pub fn generate_synthetic(seed: u64, cfg: &SynthConfig, out_dir: &Path) -> Result<GroundTruth> {
    cfg.validate()?;
    let frames_dir = out_dir.join("frames");
    let texts_dir = out_dir.join("texts");
    for d in [out_dir, &frames_dir, &texts_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut g = rng_for(seed, "synth.global", 0);
    let dirs = Directions {
        factors: (0..N_FACTORS)
            .map(|_| unit_vec(&mut g, cfg.frame_dim))
            .collect(),
        quality: unit_vec(&mut g, cfg.frame_dim),
        first_frame: unit_vec(&mut g, cfg.frame_dim),
        text: (0..TEXT_KEYS.len())
            .map(|_| unit_vec(&mut g, cfg.text_dim))
            .collect(),
    };
    let promotions: Vec<String> = (0..cfg.n_promotions)
        .map(|i| format!("promo_{i:03}"))
        .collect();
    let promotion_effects: BTreeMap<String, f64> = promotions
        .iter()
        .map(|p| (p.clone(), cfg.promotion_effect_std * normal(&mut g)))
        .collect();
    let quant_coefs: BTreeMap<String, f64> = [
        ("targeting_age_min", 0.05),
        ("targeting_age_max", -0.05),
        ("target_cost", 0.08),
        ("target_cpa", -0.08),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    let start = Utc
        .with_ymd_and_hms(2018, 1, 1, 0, 0, 0)
        .single()
        .expect("valid date");
    let span_s = 730 * 86_400;
    let videos: Vec<Video> = (0..cfg.n_videos)
        .map(|i| {
            let mut r = rng_for(seed, "synth.video", i as u64);
            let mut coefs = [0.0; N_FACTORS];
            let mut drift = [0.0; N_FACTORS];
            for k in 0..N_FACTORS {
                coefs[k] = normal(&mut r);
                drift[k] = 0.5 * normal(&mut r);
            }
            Video {
                id: format!("vid_{i:05}"),
                created: start + Duration::seconds(r.random_range(0..span_s)),
                duration_s: (r.random_range(60..=290) as f64) / 10.0,
                quality: normal(&mut r),
                coefs,
                drift,
            }
        })
        .collect();

    let mut counts = vec![cfg.n_frames];
    counts.extend(
        cfg.extra_frame_counts
            .iter()
            .copied()
            .filter(|&n| n != cfg.n_frames),
    );
    for (i, v) in videos.iter().enumerate() {
        for (j, &n) in counts.iter().enumerate() {
            let mut r = rng_for(seed, &format!("synth.frames.n{n}"), i as u64);
            let values = video_frames(v, &dirs, cfg, n, &mut r);
            let name = if j == 0 {
                format!("{}.afeb", v.id)
            } else {
                format!("{}.n{n}.afeb", v.id)
            };
            write_embedding(&frames_dir.join(name), n, cfg.frame_dim, &values)?;
        }
    }

    let mut records = Vec::with_capacity(cfg.n_ads);
    let mut true_ctr = BTreeMap::new();
    for i in 0..cfg.n_ads {
        let mut r = rng_for(seed, "synth.ad", i as u64);
        // Every video gets at least one ad; the rest are duplicates.
        let vi = if i < cfg.n_videos {
            i
        } else {
            r.random_range(0..cfg.n_videos)
        };
        let v = &videos[vi];
        let ad_id = format!("ad_{i:06}");

        let mut qualitative = BTreeMap::new();
        let promo = &promotions[r.random_range(0..promotions.len())];
        qualitative.insert(PLANTED_KEY.to_string(), promo.clone());
        for (key, &card) in QUALITATIVE_KEYS[1..].iter().zip(&NUISANCE_CARDINALITY) {
            let c = r.random_range(0..card);
            qualitative.insert(key.to_string(), format!("{key}_{c}"));
        }

        let age_min = [18.0, 20.0, 25.0, 30.0, 35.0][r.random_range(0..5)];
        let age_max = age_min + 5.0 * r.random_range(2..=8) as f64;
        let cost = (r.random_range(50.0..500.0_f64)).round();
        let cpa = (r.random_range(500.0..5000.0_f64)).round();
        // (key, raw value, rough z-score used for the planted effect)
        let quant = [
            ("targeting_age_min", age_min, (age_min - 25.6) / 6.0),
            ("targeting_age_max", age_max, (age_max - 50.6) / 10.0),
            ("target_cost", cost, (cost - 275.0) / 130.0),
            ("target_cpa", cpa, (cpa - 2750.0) / 1300.0),
        ];
        let quant_effect: f64 = quant.iter().map(|(k, _, z)| quant_coefs[*k] * z).sum();
        let quantitative: BTreeMap<String, f64> =
            quant.iter().map(|(k, v, _)| (k.to_string(), *v)).collect();

        let text_latent = normal(&mut r);
        let mut text_values = Vec::with_capacity(TEXT_KEYS.len() * cfg.text_dim);
        for d in &dirs.text {
            for &x in d {
                let noise = TEXT_NOISE * normal(&mut r);
                text_values.push((text_latent * x + noise) as f32);
            }
        }
        let text_ref = PathBuf::from("texts").join(format!("{ad_id}.afeb"));
        write_embedding(
            &out_dir.join(&text_ref),
            TEXT_KEYS.len(),
            cfg.text_dim,
            &text_values,
        )?;
        let text_fields: BTreeMap<String, String> = TEXT_KEYS
            .iter()
            .map(|k| (k.to_string(), format!("{k} {}", r.random_range(0..1000))))
            .collect();

        let z = cfg.base_logit
            + cfg.quality_coef * v.quality
            + promotion_effects[promo]
            + quant_effect
            + cfg.text_coef * text_latent
            + cfg.noise_std * normal(&mut r);
        let p = sigmoid(z);
        let log_lo = 501f64.ln();
        let log_hi = 1e5f64.ln();
        let impressions = r.random_range(log_lo..log_hi).exp().round() as u64;
        let sampled = Binomial::new(impressions, p)
            .map_err(|e| Error::InvalidArgument(format!("binomial: {e}")))?
            .sample(&mut r);
        true_ctr.insert(ad_id.clone(), p);

        records.push(AdRecord {
            ad_id,
            video_id: v.id.clone(),
            created_at: v.created + Duration::seconds(r.random_range(0..14 * 86_400)),
            qualitative,
            quantitative,
            text_fields,
            impressions,
            clicks: sampled.max(1),
            duration_s: v.duration_s,
            frame_embed_ref: PathBuf::from("frames").join(format!("{}.afeb", v.id)),
            text_embed_ref: text_ref,
        });
    }
    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;

    let truth = GroundTruth {
        seed,
        config: cfg.clone(),
        planted_key: PLANTED_KEY.to_string(),
        promotion_effects,
        quant_coefs,
        video_quality: videos.iter().map(|v| (v.id.clone(), v.quality)).collect(),
        true_ctr,
    };
    let path = out_dir.join("ground_truth.json");
    fs::write(&path, serde_json::to_string_pretty(&truth)?).map_err(|e| Error::io(&path, e))?;
    Ok(truth)
}
