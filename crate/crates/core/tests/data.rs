use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use adfusion_core::data::*;
use adfusion_core::Error;
use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;

fn record(ad: &str, video: &str, day: i64) -> AdRecord {
    AdRecord {
        ad_id: ad.into(),
        video_id: video.into(),
        created_at: Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap() + Duration::days(day),
        qualitative: QUALITATIVE_KEYS
            .iter()
            .map(|k| (k.to_string(), "x".to_string()))
            .collect(),
        quantitative: QUANTITATIVE_KEYS
            .iter()
            .map(|k| (k.to_string(), 1.0))
            .collect(),
        text_fields: BTreeMap::new(),
        impressions: 1000,
        clicks: 10,
        duration_s: 15.0,
        frame_embed_ref: PathBuf::from("frames").join(format!("{video}.afeb")),
        text_embed_ref: PathBuf::from("texts").join(format!("{ad}.afeb")),
    }
}

#[test]
fn filter_boundaries_are_exact() {
    let mut r = record("a", "v", 0);
    r.impressions = 500;
    assert_eq!(check_record(&r), Some(FilterRule::TooFewImpressions));
    r.impressions = 501;
    r.clicks = 1;
    assert_eq!(check_record(&r), None);
    r.clicks = 0;
    r.impressions = 1_000_000;
    assert_eq!(check_record(&r), Some(FilterRule::NoClicks));
    r.clicks = 3;
    for (d, ok) in [(4.99, false), (5.0, true), (30.0, true), (30.01, false)] {
        r.duration_s = d;
        assert_eq!(check_record(&r).is_none(), ok, "duration {d}");
    }
    // First failing rule wins.
    r.impressions = 10;
    r.clicks = 0;
    r.duration_s = 100.0;
    assert_eq!(check_record(&r), Some(FilterRule::TooFewImpressions));
}

#[test]
fn filter_partitions_records() {
    let mut rs: Vec<AdRecord> = (0..6).map(|i| record(&format!("a{i}"), "v", 0)).collect();
    rs[1].impressions = 100;
    rs[4].clicks = 0;
    let out = filter_records(rs);
    assert_eq!(out.kept.len(), 4);
    let reasons: Vec<_> = out
        .rejected
        .iter()
        .map(|(r, rule)| (r.ad_id.as_str(), *rule))
        .collect();
    assert_eq!(
        reasons,
        vec![
            ("a1", FilterRule::TooFewImpressions),
            ("a4", FilterRule::NoClicks)
        ]
    );
}

#[test]
fn three_groups_split_one_each() {
    let rs = vec![
        record("c", "v3", 20),
        record("a", "v1", 0),
        record("b", "v2", 10),
    ];
    let ratios = SplitRatios {
        train: 1.0 / 3.0,
        valid: 1.0 / 3.0,
        test: 1.0 / 3.0,
    };
    let s = split_chronological_grouped(&rs, ratios).unwrap();
    assert_eq!(s.train, vec![1]);
    assert_eq!(s.valid, vec![2]);
    assert_eq!(s.test, vec![0]);
    check_split(&rs, &s).unwrap();
}

#[test]
fn split_needs_three_groups() {
    let rs = vec![
        record("a", "v1", 0),
        record("b", "v2", 1),
        record("c", "v1", 2),
    ];
    assert!(matches!(
        split_chronological_grouped(&rs, SplitRatios::default()),
        Err(Error::TooFewGroups(2))
    ));
    let bad = SplitRatios {
        train: 0.5,
        valid: 0.5,
        test: 0.5,
    };
    assert!(split_chronological_grouped(&rs, bad).is_err());
}

#[test]
fn thousand_groups_hit_the_target_fractions() {
    // Group sizes 1..=4, one group per day.
    let mut rs = Vec::new();
    for g in 0..1000 {
        for j in 0..(g % 4 + 1) {
            rs.push(record(&format!("a{g}_{j}"), &format!("v{g}"), g as i64));
        }
    }
    let ratios = SplitRatios::default();
    let s = split_chronological_grouped(&rs, ratios).unwrap();
    check_split(&rs, &s).unwrap();
    let n = rs.len() as f64;
    let max_group = 4.0;
    assert!((s.train.len() as f64 - ratios.train * n).abs() <= max_group);
    assert!((s.valid.len() as f64 - ratios.valid * n).abs() <= max_group);
    assert!((s.test.len() as f64 - ratios.test * n).abs() <= max_group);
}

fn corpus_strategy() -> impl Strategy<Value = Vec<AdRecord>> {
    prop::collection::vec((0usize..40, 0i64..500, 0i64..30), 3..200).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (v, day, jitter))| record(&format!("a{i}"), &format!("v{v}"), day + jitter))
            .collect()
    })
}

proptest! {
    // Integration tests have no lib.rs to anchor a regressions file.
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn split_invariants_hold(rs in corpus_strategy(), t in 0.3f64..0.9, v in 0.05f64..0.5) {
        let v = v.min((1.0 - t) * 0.9);
        let ratios = SplitRatios { train: t, valid: v, test: 1.0 - t - v };
        let groups: std::collections::HashSet<_> = rs.iter().map(|r| r.video_id.clone()).collect();
        match split_chronological_grouped(&rs, ratios) {
            Ok(s) => {
                prop_assert!(check_split(&rs, &s).is_ok(), "{:?}", check_split(&rs, &s));
                prop_assert!(!s.train.is_empty() && !s.valid.is_empty() && !s.test.is_empty());
            }
            Err(Error::TooFewGroups(n)) => prop_assert!(groups.len() < 3 && n == groups.len()),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn transform_round_trip(x in 0.0f64..=1.0) {
        let y = log_transform_ctr(x).unwrap();
        prop_assert!((inverse_transform(y) - x).abs() <= 1e-12);
    }

    #[test]
    fn transform_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(log_transform_ctr(lo).unwrap() <= log_transform_ctr(hi).unwrap());
    }
}

fn vocab_record(promo: &str, age: f64) -> AdRecord {
    let mut r = record("a", "v", 0);
    r.qualitative.insert("promotion_id".into(), promo.into());
    r.quantitative.insert("targeting_age_min".into(), age);
    r
}

fn promo_only() -> FeatureExclusions {
    FeatureExclusions {
        qualitative: QUALITATIVE_KEYS[1..]
            .iter()
            .map(|k| k.to_string())
            .collect(),
        ..Default::default()
    }
}

#[test]
fn one_hot_encoding_and_unknown_slot() {
    let train = [
        vocab_record("c", 20.0),
        vocab_record("a", 30.0),
        vocab_record("b", 40.0),
    ];
    let vocab = EncoderVocab::build(&train, &promo_only()).unwrap();
    assert_eq!(vocab.qual_onehot_dim(), 4);
    assert_eq!(
        vocab.encode_qualitative(&vocab_record("b", 0.0)).unwrap(),
        vec![0.0, 1.0, 0.0, 0.0]
    );
    assert_eq!(
        vocab.encode_qualitative(&vocab_record("z", 0.0)).unwrap(),
        vec![0.0, 0.0, 0.0, 1.0]
    );

    let full = EncoderVocab::build(&train, &FeatureExclusions::default()).unwrap();
    // 3 promotions + UNKNOWN, and 11 single-category keys with UNKNOWN each.
    assert_eq!(full.qual_onehot_dim(), 4 + 11 * 2);
    for r in &train {
        assert_eq!(
            full.encode_qualitative(r).unwrap().len(),
            full.qual_onehot_dim()
        );
    }
}

#[test]
fn quantitative_prenormalization() {
    // Train values 20, 30, 40: mean 30, population std √(200/3).
    let train = [
        vocab_record("a", 20.0),
        vocab_record("a", 30.0),
        vocab_record("a", 40.0),
    ];
    let mut vocab = EncoderVocab::build(&train, &FeatureExclusions::default()).unwrap();
    let age = &vocab.quantitative[0];
    assert_eq!(age.key, "targeting_age_min");
    assert!((age.mean - 30.0).abs() < 1e-12);
    assert_eq!(
        vocab
            .encode_quantitative(&vocab_record("a", 40.0), false)
            .unwrap()[0],
        40.0
    );

    vocab.quantitative[0].std = 10.0;
    let x = vocab
        .encode_quantitative(&vocab_record("a", 40.0), true)
        .unwrap();
    assert!((x[0] - 1.0).abs() < 1e-12);
    // Constant key on the train split: guarded, finite.
    assert_eq!(vocab.quantitative[1].std, 0.0);
    assert!(x[1].is_finite());
}

#[test]
fn missing_key_is_named() {
    let train = [vocab_record("a", 1.0)];
    let vocab = EncoderVocab::build(&train, &FeatureExclusions::default()).unwrap();
    let mut r = vocab_record("a", 1.0);
    r.qualitative.remove("genre");
    match vocab.encode_qualitative(&r) {
        Err(Error::MissingKey(k)) => assert_eq!(k, "genre"),
        other => panic!("unexpected {other:?}"),
    }
    r.quantitative.remove("target_cpa");
    assert!(matches!(
        EncoderVocab::build([&r], &FeatureExclusions::default()),
        Err(Error::MissingKey(_))
    ));
    let bad = FeatureExclusions {
        text: vec!["nonsense".into()],
        ..Default::default()
    };
    assert!(EncoderVocab::build(&train, &bad).is_err());
}

#[test]
fn vocab_file_round_trip_keeps_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let train = [vocab_record("a", 21.3), vocab_record("b", 33.7)];
    let vocab = EncoderVocab::build(&train, &FeatureExclusions::default()).unwrap();
    let path = dir.path().join("vocab.json");
    vocab.save(&path).unwrap();
    let back = EncoderVocab::load(&path).unwrap();
    assert_eq!(back, vocab);
    assert_eq!(back.fingerprint(), vocab.fingerprint());
    let other = EncoderVocab::build(&train[..1], &FeatureExclusions::default()).unwrap();
    assert_ne!(other.fingerprint(), vocab.fingerprint());
}

#[test]
fn text_exclusion_drops_rows() {
    let train = [vocab_record("a", 1.0)];
    let ex = FeatureExclusions {
        text: vec!["account_name".into(), "creative_title".into()],
        ..Default::default()
    };
    let vocab = EncoderVocab::build(&train, &ex).unwrap();
    assert_eq!(vocab.text_rows(), vec![0, 2, 4]);
}

#[test]
fn manifest_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let rs = vec![record("a", "v1", 0), record("b", "v2", 3)];
    write_manifest(&path, &rs).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), rs);

    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("\n{\"ad_id\": 3}\n");
    fs::write(&path, &text).unwrap();
    match read_manifest(&path) {
        Err(Error::Manifest { line, .. }) => assert_eq!(line, 4),
        other => panic!("unexpected {other:?}"),
    }

    let mut bad = record("c", "v", 0);
    bad.clicks = bad.impressions + 1;
    write_manifest(&path, &[bad]).unwrap();
    assert!(matches!(
        read_manifest(&path),
        Err(Error::CorruptFile { .. })
    ));
    assert!(matches!(
        read_manifest(&dir.path().join("nope")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn unlabeled_manifest_lines_parse() {
    let line = r#"{"ad_id":"a","video_id":"v","created_at":"2019-03-01T00:00:00Z","qualitative":{},"quantitative":{},"duration_s":10.0,"frame_embed_ref":"f.afeb","text_embed_ref":"t.afeb"}"#;
    let r: AdRecord = serde_json::from_str(line).unwrap();
    assert!(!r.is_labeled());
    assert_eq!(r.clicks, 0);
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        n_ads: 60,
        n_videos: 20,
        n_frames: 4,
        frame_dim: 16,
        text_dim: 6,
        extra_frame_counts: vec![2],
        ..SynthConfig::default()
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn synthetic_corpus_is_deterministic_and_loadable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_synth();
    generate_synthetic(3, &cfg, a.path()).unwrap();
    generate_synthetic(3, &cfg, b.path()).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));

    let c = tempfile::tempdir().unwrap();
    generate_synthetic(4, &cfg, c.path()).unwrap();
    assert_ne!(tree(a.path()), tree(c.path()));

    let records = read_manifest(&a.path().join("manifest.jsonl")).unwrap();
    assert_eq!(records.len(), cfg.n_ads);
    let videos: std::collections::HashSet<_> = records.iter().map(|r| &r.video_id).collect();
    assert_eq!(videos.len(), cfg.n_videos);
    assert!(records.iter().all(|r| check_record(r).is_none()));

    let vocab = EncoderVocab::build(&records, &FeatureExclusions::default()).unwrap();
    let opts = EncodeOptions {
        n_frames: 4,
        frame_dim: 16,
        text_dim: 6,
        prenormalize_quant: false,
    };
    let store = EmbeddingStore::new();
    let refs: Vec<&AdRecord> = records.iter().collect();
    let ads = encode_records(&refs, a.path(), &vocab, &opts, &store).unwrap();
    assert_eq!(ads.len(), cfg.n_ads);
    assert_eq!(store.len(), cfg.n_videos);
    assert!(ads
        .iter()
        .all(|a| a.target.unwrap() > 0.0 && a.texts.rows() == 5));

    // The 2-frame variant is picked up for n_frames = 2.
    let two = EncodeOptions {
        n_frames: 2,
        ..opts
    };
    let ad = encode_record(&records[0], a.path(), &vocab, &two, &EmbeddingStore::new()).unwrap();
    assert_eq!(ad.frames.rows(), 2);
    // No 3-frame file exists.
    let three = EncodeOptions {
        n_frames: 3,
        ..opts
    };
    assert!(matches!(
        encode_record(
            &records[0],
            a.path(),
            &vocab,
            &three,
            &EmbeddingStore::new()
        ),
        Err(Error::DimMismatch { .. })
    ));
}

#[test]
fn synth_rejects_more_videos_than_ads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_videos: 61,
        ..small_synth()
    };
    assert!(generate_synthetic(1, &cfg, dir.path()).is_err());
}
