use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adfusion_core::analysis::{
    architecture_specs, collect_attention, correlation_table, meta_exclusion_specs,
    run_ablation_campaign, text_exclusion_specs, write_campaign_csv, write_campaign_json,
    AblationSpec, CampaignBase, CorrelationOptions, CtrScale, EtaForm, MetaVariant,
};
use adfusion_core::data::{
    encode_records, filter_records, generate_synthetic, inverse_transform, read_manifest, AdRecord,
    EmbeddingStore, EncodeOptions, EncoderVocab, SplitCorpus, SplitPart, SplitRatios, SynthConfig,
};
use adfusion_core::model::{load_params, save_params, ModelConfig, ModelParams};
use adfusion_core::seed::rng_for;
use adfusion_core::training::{
    evaluate as score, predict as infer, train_from, write_predictions_csv,
};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{check_schema, read_json, write_json, RunConfig, SCHEMA_VERSION};
use crate::{
    AblateArgs, AttentionArgs, CorrelationArgs, EvaluateArgs, MetaVariantArg, ModalityArg,
    ModelInputs, PredictArgs, PresetArg, RunArgs, SplitArg, SynthArgs, UsageError,
};

pub const RUN_CONFIG: &str = "run_config.json";
pub const BEST_PARAMS: &str = "best_params.afpm";
pub const VOCAB: &str = "vocab.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const TEST_METRICS: &str = "test_metrics.json";
pub const TEST_PREDICTIONS: &str = "test_predictions.csv";
pub const METRICS: &str = "metrics.json";
pub const PREDICTIONS: &str = "predictions.csv";
pub const CAMPAIGN_CSV: &str = "campaign.csv";
pub const CAMPAIGN_JSON: &str = "campaign.json";

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} not found", p.display())))
    }
}

fn make_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn ratios_arg(v: &Option<Vec<f64>>) -> Option<SplitRatios> {
    v.as_ref().map(|r| SplitRatios {
        train: r[0],
        valid: r[1],
        test: r[2],
    })
}

/// Metrics written by `train` and `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub n: usize,
    pub mse: f64,
    pub rmse: f64,
    pub pearson_r: Option<f64>,
    /// RMSE of always predicting the mean training target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_baseline_rmse: Option<f64>,
}

// ---------------------------------------------------------------- synth

#[derive(Serialize)]
struct SynthEcho<'a> {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    synth: &'a SynthConfig,
}

pub fn synth(a: &SynthArgs, quiet: bool) -> Result<()> {
    let mut cfg = SynthConfig::default();
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut cfg.n_ads, a.n_ads);
    set(&mut cfg.n_videos, a.n_videos);
    set(&mut cfg.n_frames, a.n_frames);
    set(&mut cfg.frame_dim, a.frame_dim);
    set(&mut cfg.text_dim, a.text_dim);
    set(&mut cfg.n_promotions, a.n_promotions);
    if a.no_extra_frames {
        cfg.extra_frame_counts.clear();
    } else if let Some(v) = &a.extra_frames {
        cfg.extra_frame_counts = v.clone();
    }
    cfg.validate().map_err(usage)?;
    make_dir(&a.out)?;
    let t = Instant::now();
    generate_synthetic(a.seed, &cfg, &a.out)?;
    write_json(
        &a.out.join(RUN_CONFIG),
        &SynthEcho {
            schema_version: SCHEMA_VERSION,
            command: "synth",
            seed: a.seed,
            synth: &cfg,
        },
    )?;
    if !quiet {
        eprintln!(
            "wrote {} ads / {} videos to {} ({:.1}s)",
            cfg.n_ads,
            cfg.n_videos,
            a.out.display(),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- train

/// The file config (if any) with every given flag applied on top.
pub fn resolve_run(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let manifest = a
                .manifest
                .clone()
                .ok_or_else(|| usage("--manifest is required without --config"))?;
            let out = a
                .out
                .clone()
                .ok_or_else(|| usage("--out is required without --config"))?;
            RunConfig::new(manifest, out)
        }
    };
    if let Some(p) = &a.manifest {
        cfg.manifest = p.clone();
    }
    if let Some(p) = &a.embeddings_dir {
        cfg.embeddings_dir = Some(p.clone());
    }
    if let Some(p) = &a.out {
        cfg.output_dir = p.clone();
    }
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.momentum {
        t.momentum = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if a.no_shuffle {
        t.shuffle = false;
    }
    if let Some(r) = ratios_arg(&a.split) {
        cfg.split = r;
    }
    let m = &mut cfg.model;
    if let Some(v) = a.n_frames {
        m.n_frames = v;
    }
    if let Some(v) = a.frame_dim {
        m.frame_embed_dim = v;
    }
    if let Some(v) = a.text_dim {
        m.text_embed_dim = v;
    }
    if let Some(mods) = &a.modalities {
        m.flags.use_visual = mods.contains(&ModalityArg::Visual);
        m.flags.use_meta = mods.contains(&ModalityArg::Meta);
        m.flags.use_text = mods.contains(&ModalityArg::Text);
    }
    if let Some(v) = a.meta_variant {
        let v = match v {
            MetaVariantArg::Unprocessed => MetaVariant::Unprocessed,
            MetaVariantArg::Prenormalized => MetaVariant::Prenormalized,
            MetaVariantArg::Separated => MetaVariant::Separated,
            MetaVariantArg::SeparatedPrenormalized => MetaVariant::SeparatedPrenormalized,
        };
        m.flags.separate_meta = v.separated();
        m.flags.prenormalize_quant = v.prenormalized();
    }
    if a.no_regularization {
        m.flags.extra_regularization = false;
    }
    for k in &a.exclude_meta {
        if adfusion_core::data::QUALITATIVE_KEYS.contains(&k.as_str()) {
            cfg.exclusions.qualitative.push(k.clone());
        } else {
            cfg.exclusions.quantitative.push(k.clone());
        }
    }
    cfg.exclusions.text.extend(a.exclude_text.iter().cloned());
    Ok(cfg)
}

fn load_corpus(cfg: &RunConfig, quiet: bool) -> Result<SplitCorpus> {
    let mut corpus = SplitCorpus::load(&cfg.manifest, cfg.split)?;
    corpus.base_dir = cfg.base_dir();
    if !quiet {
        eprintln!(
            "{} records kept ({} filtered out): train {} / valid {} / test {}",
            corpus.records.len(),
            corpus.rejected.len(),
            corpus.split.train.len(),
            corpus.split.valid.len(),
            corpus.split.test.len()
        );
    }
    Ok(corpus)
}

pub fn train(a: &RunArgs, quiet: bool) -> Result<()> {
    let cfg = resolve_run(a)?;
    cfg.validate()?;
    let out = &cfg.output_dir;
    make_dir(out)?;
    write_json(&out.join(RUN_CONFIG), &cfg)?;

    let corpus = load_corpus(&cfg, quiet)?;
    let store = EmbeddingStore::new();
    let enc = corpus.encode(&cfg.exclusions, &cfg.model.encode_options(), &store)?;
    enc.vocab.save(&out.join(VOCAB))?;

    let model = cfg.model.model_config(Some(&enc.vocab));
    let init = ModelParams::init(model, &mut rng_for(cfg.train.seed, "init", 0))?;
    let epochs = cfg.train.epochs;
    let mut clock = Instant::now();
    let outcome = train_from(init, &cfg.train, &enc.train, &enc.valid, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>4}/{epochs}  train {:.6}  valid {:.6}  ({:.1}s)",
                e.epoch,
                e.train_mse,
                e.valid_mse,
                clock.elapsed().as_secs_f64()
            );
            clock = Instant::now();
        }
    })?;

    save_params(&outcome.best, &out.join(BEST_PARAMS))?;
    let mut log = outcome.log;
    log.best_params_ref = Some(PathBuf::from(BEST_PARAMS));
    log.write_jsonl(&out.join(TRAIN_LOG))?;
    log.write_summary(&out.join(TRAIN_SUMMARY))?;

    let ev = score(&outcome.best, &enc.test)?;
    let mean = enc.train.iter().filter_map(|a| a.target).sum::<f64>() / enc.train.len() as f64;
    let base_mse = ev
        .rows
        .iter()
        .map(|r| (r.target - mean).powi(2))
        .sum::<f64>()
        / ev.n as f64;
    let report = MetricsReport {
        split: "test".into(),
        n: ev.n,
        mse: ev.mse,
        rmse: ev.rmse,
        pearson_r: ev.pearson_r,
        constant_baseline_rmse: Some(base_mse.sqrt()),
    };
    write_json(&out.join(TEST_METRICS), &report)?;
    write_predictions_csv(&out.join(TEST_PREDICTIONS), &ev.rows)?;
    println!(
        "best epoch {} (valid MSE {:.6}); test RMSE {:.6}, r {}, constant baseline RMSE {:.6}",
        log.best_epoch,
        log.best_valid_mse,
        ev.rmse,
        fmt_r(ev.pearson_r),
        base_mse.sqrt()
    );
    Ok(())
}

fn fmt_r(r: Option<f64>) -> String {
    r.map_or("undefined".into(), |r| format!("{r:.4}"))
}

// ------------------------------------------------- evaluate / predict

fn check_vocab(config: &ModelConfig, vocab: &EncoderVocab) -> Result<()> {
    let mismatch = |m: String| adfusion_core::Error::VocabMismatch(m);
    if let Some(fp) = &config.vocab_fingerprint {
        let have = vocab.fingerprint();
        if *fp != have {
            return Err(mismatch(format!("model expects vocabulary {fp}, got {have}")).into());
        }
    }
    if config.qual_onehot_dim != vocab.qual_onehot_dim() || config.quant_dim != vocab.quant_dim() {
        return Err(mismatch(format!(
            "model input widths {}+{} differ from vocabulary widths {}+{}",
            config.qual_onehot_dim,
            config.quant_dim,
            vocab.qual_onehot_dim(),
            vocab.quant_dim()
        ))
        .into());
    }
    Ok(())
}

struct LoadedModel {
    params: ModelParams,
    vocab: EncoderVocab,
    vocab_path: PathBuf,
    base_dir: PathBuf,
}

impl LoadedModel {
    fn load(inp: &ModelInputs) -> Result<Self> {
        require_file(&inp.params, "params file")?;
        require_file(&inp.manifest, "manifest")?;
        let vocab_path = inp
            .vocab
            .clone()
            .unwrap_or_else(|| sibling(&inp.params, VOCAB));
        require_file(&vocab_path, "vocabulary")?;
        if let Some(d) = &inp.embeddings_dir {
            if !d.is_dir() {
                return Err(usage(format!("embeddings dir {} not found", d.display())));
            }
        }
        let params = load_params(&inp.params)?;
        let vocab = EncoderVocab::load(&vocab_path)?;
        check_vocab(&params.config, &vocab)?;
        let base_dir = match &inp.embeddings_dir {
            Some(d) => d.clone(),
            None => inp
                .manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        };
        Ok(Self {
            params,
            vocab,
            vocab_path,
            base_dir,
        })
    }

    fn encode(&self, records: &[&AdRecord]) -> Result<Vec<adfusion_core::data::EncodedAd>> {
        let c = &self.params.config;
        let opts = EncodeOptions {
            n_frames: c.n_frames,
            frame_dim: c.frame_embed_dim,
            text_dim: c.text_embed_dim,
            prenormalize_quant: c.flags.prenormalize_quant,
        };
        Ok(encode_records(
            records,
            &self.base_dir,
            &self.vocab,
            &opts,
            &EmbeddingStore::new(),
        )?)
    }
}

fn sibling(p: &Path, name: &str) -> PathBuf {
    p.parent()
        .map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

/// Explicit ratios, else those of the training run next to `params`, else
/// the defaults.
fn resolve_ratios(explicit: &Option<Vec<f64>>, params: Option<&Path>) -> Result<SplitRatios> {
    if let Some(r) = ratios_arg(explicit) {
        r.validate().map_err(usage)?;
        return Ok(r);
    }
    if let Some(p) = params {
        let run = sibling(p, RUN_CONFIG);
        if run.is_file() {
            return Ok(RunConfig::load(&run)?.split);
        }
    }
    Ok(SplitRatios::default())
}

/// Filtered records of one split, in manifest order within the split.
fn select_records(manifest: &Path, split: SplitArg, ratios: SplitRatios) -> Result<Vec<AdRecord>> {
    let part = match split {
        SplitArg::All => return Ok(filter_records(read_manifest(manifest)?).kept),
        SplitArg::Train => SplitPart::Train,
        SplitArg::Valid => SplitPart::Valid,
        SplitArg::Test => SplitPart::Test,
    };
    let corpus = SplitCorpus::load(manifest, ratios)?;
    Ok(corpus
        .part(corpus.split.part(part))
        .into_iter()
        .cloned()
        .collect())
}

fn split_name(s: SplitArg) -> &'static str {
    match s {
        SplitArg::Train => "train",
        SplitArg::Valid => "valid",
        SplitArg::Test => "test",
        SplitArg::All => "all",
    }
}

#[derive(Serialize)]
struct ModelEcho<'a> {
    schema_version: u32,
    command: &'static str,
    params: &'a Path,
    vocab: &'a Path,
    manifest: &'a Path,
    embeddings_dir: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratios: Option<SplitRatios>,
}

impl<'a> ModelEcho<'a> {
    fn new(command: &'static str, inp: &'a ModelInputs, m: &'a LoadedModel) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command,
            params: &inp.params,
            vocab: &m.vocab_path,
            manifest: &inp.manifest,
            embeddings_dir: &m.base_dir,
            split: None,
            ratios: None,
        }
    }
}

pub fn evaluate(a: &EvaluateArgs, quiet: bool) -> Result<()> {
    let inp = &a.inputs;
    let model = LoadedModel::load(inp)?;
    let ratios = resolve_ratios(&a.ratios, Some(&inp.params))?;
    make_dir(&inp.out)?;
    let echo = ModelEcho {
        split: Some(split_name(a.split)),
        ratios: Some(ratios),
        ..ModelEcho::new("evaluate", inp, &model)
    };
    write_json(&inp.out.join(RUN_CONFIG), &echo)?;

    let records = select_records(&inp.manifest, a.split, ratios)?;
    let refs: Vec<&AdRecord> = records.iter().collect();
    let ads = model.encode(&refs)?;
    let ev = score(&model.params, &ads)?;
    let report = MetricsReport {
        split: split_name(a.split).into(),
        n: ev.n,
        mse: ev.mse,
        rmse: ev.rmse,
        pearson_r: ev.pearson_r,
        constant_baseline_rmse: None,
    };
    write_json(&inp.out.join(METRICS), &report)?;
    write_predictions_csv(&inp.out.join(PREDICTIONS), &ev.rows)?;
    if !quiet {
        eprintln!("evaluated {} records", ev.n);
    }
    println!(
        "{} RMSE {:.6}, r {}",
        report.split,
        ev.rmse,
        fmt_r(ev.pearson_r)
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictionOut<'a> {
    ad_id: &'a str,
    prediction: f64,
    raw_ctr_prediction: f64,
}

pub fn predict(a: &PredictArgs, quiet: bool) -> Result<()> {
    let inp = &a.inputs;
    let model = LoadedModel::load(inp)?;
    make_dir(&inp.out)?;
    write_json(
        &inp.out.join(RUN_CONFIG),
        &ModelEcho::new("predict", inp, &model),
    )?;

    let records = read_manifest(&inp.manifest)?;
    let refs: Vec<&AdRecord> = records.iter().collect();
    let ads = model.encode(&refs)?;
    let traces = infer(&model.params, &ads)?;
    let path = inp.out.join(PREDICTIONS);
    let mut w = csv::Writer::from_path(&path)?;
    for (ad, t) in ads.iter().zip(&traces) {
        w.serialize(PredictionOut {
            ad_id: &ad.ad_id,
            prediction: t.prediction,
            raw_ctr_prediction: inverse_transform(t.prediction),
        })?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    if !quiet {
        eprintln!("wrote {} predictions to {}", traces.len(), path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------- ablate

/// An ablation campaign file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignFile {
    pub schema_version: u32,
    pub specs: Vec<AblationSpec>,
}

#[derive(Serialize)]
struct AblateEcho<'a> {
    schema_version: u32,
    command: &'static str,
    run: &'a RunConfig,
    jobs: usize,
    specs: &'a [AblationSpec],
}

pub fn ablate(a: &AblateArgs, quiet: bool) -> Result<()> {
    let specs = match (&a.campaign, a.preset) {
        (Some(p), _) => {
            require_file(p, "campaign file")?;
            let file: CampaignFile = read_json(p).map_err(|e| usage(format!("{e:#}")))?;
            check_schema(file.schema_version)?;
            file.specs
        }
        (None, Some(PresetArg::Architecture)) => architecture_specs(),
        (None, Some(PresetArg::MetaExclusions)) => meta_exclusion_specs(),
        (None, Some(PresetArg::TextExclusions)) => text_exclusion_specs(),
        (None, None) => bail!(usage("either --campaign or --preset is required")),
    };
    if specs.is_empty() {
        bail!(usage("campaign has no runs"));
    }
    for s in &specs {
        s.validate().map_err(usage)?;
    }
    if a.jobs == 0 {
        bail!(usage("--jobs must be at least 1"));
    }
    let cfg = resolve_run(&a.run)?;
    cfg.validate()?;
    let out = &cfg.output_dir;
    make_dir(out)?;
    write_json(
        &out.join(RUN_CONFIG),
        &AblateEcho {
            schema_version: SCHEMA_VERSION,
            command: "ablate",
            run: &cfg,
            jobs: a.jobs,
            specs: &specs,
        },
    )?;

    let corpus = load_corpus(&cfg, quiet)?;
    let base = CampaignBase {
        model: cfg.model.model_config(None),
        train: cfg.train.clone(),
    };
    if !quiet {
        eprintln!("running {} trainings, {} at a time", specs.len(), a.jobs);
    }
    let t = Instant::now();
    let results = run_ablation_campaign(&specs, &corpus, &base, a.jobs)?;
    write_campaign_csv(&out.join(CAMPAIGN_CSV), &results)?;
    write_campaign_json(&out.join(CAMPAIGN_JSON), &results)?;

    for r in &results {
        match &r.error {
            None => println!(
                "{:>16}  RMSE {:.6}  r {}  {}",
                r.spec.id,
                r.rmse.unwrap_or(f64::NAN),
                fmt_r(r.pearson_r),
                r.spec.label
            ),
            Some(e) => println!("{:>16}  FAILED: {e}  {}", r.spec.id, r.spec.label),
        }
    }
    if !quiet {
        eprintln!("campaign finished in {:.1}s", t.elapsed().as_secs_f64());
    }
    let failed = results.iter().filter(|r| !r.succeeded()).count();
    if failed > 0 {
        return Err(anyhow!("{failed} of {} runs failed", results.len()));
    }
    Ok(())
}

// ---------------------------------------------------------------- analyze

pub fn attention(a: &AttentionArgs, quiet: bool) -> Result<()> {
    let inp = &a.inputs;
    let model = LoadedModel::load(inp)?;
    let ratios = resolve_ratios(&a.ratios, Some(&inp.params))?;
    make_dir(&inp.out)?;
    let echo = ModelEcho {
        split: Some(split_name(a.split)),
        ratios: Some(ratios),
        ..ModelEcho::new("analyze-attention", inp, &model)
    };
    write_json(&inp.out.join(RUN_CONFIG), &echo)?;

    let records = select_records(&inp.manifest, a.split, ratios)?;
    let refs: Vec<&AdRecord> = records.iter().collect();
    let ads = model.encode(&refs)?;
    let report = collect_attention(&model.params, &ads)?;
    report.write_frame_csv(&inp.out.join("attention_frames.csv"))?;
    report.write_modality_csv(&inp.out.join("attention_modalities.csv"))?;
    report.write_summary(&inp.out.join("attention_summary.json"))?;
    if !quiet {
        eprintln!("attention over {} ads", report.rows.len());
    }
    let means: Vec<String> = report
        .modalities
        .iter()
        .zip(&report.modality_means)
        .map(|(m, w)| format!("{} {w:.4}", m.name()))
        .collect();
    println!("mean modality attention: {}", means.join(", "));
    Ok(())
}

#[derive(Serialize)]
struct CorrelationEcho<'a> {
    schema_version: u32,
    command: &'static str,
    manifest: &'a Path,
    split: &'static str,
    ratios: SplitRatios,
    options: CorrelationOptions,
}

pub fn correlation(a: &CorrelationArgs, quiet: bool) -> Result<()> {
    require_file(&a.manifest, "manifest")?;
    let ratios = resolve_ratios(&a.ratios, None)?;
    let options = CorrelationOptions {
        scale: if a.raw_ctr {
            CtrScale::Raw
        } else {
            CtrScale::Log
        },
        eta_form: if a.eta_squared {
            EtaForm::EtaSquared
        } else {
            EtaForm::Eta
        },
    };
    make_dir(&a.out)?;
    write_json(
        &a.out.join(RUN_CONFIG),
        &CorrelationEcho {
            schema_version: SCHEMA_VERSION,
            command: "analyze-correlation",
            manifest: &a.manifest,
            split: split_name(a.split),
            ratios,
            options,
        },
    )?;
    let records = select_records(&a.manifest, a.split, ratios)?;
    let table = correlation_table(&records, options)?;
    table.write_csv(&a.out.join("correlation.csv"))?;
    table.write_json(&a.out.join("correlation.json"))?;
    if !quiet {
        eprintln!("correlations over {} records", table.n_records);
    }
    for q in table.ranked_qualitative() {
        println!("{:>24}  {:.4}", q.key, q.value);
    }
    Ok(())
}
