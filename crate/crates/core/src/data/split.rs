use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{check_record, AdRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.82,
            valid: 0.08,
            test: 0.10,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be positive: {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Indices into the record slice that was split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Valid,
    Test,
}

impl DatasetSplit {
    pub fn part(&self, p: SplitPart) -> &[usize] {
        match p {
            SplitPart::Train => &self.train,
            SplitPart::Valid => &self.valid,
            SplitPart::Test => &self.test,
        }
    }
}

struct Group<'a> {
    earliest: DateTime<Utc>,
    video_id: &'a str,
    members: Vec<usize>,
}

fn groups(records: &[AdRecord]) -> Vec<Group<'_>> {
    let mut by_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_video.entry(&r.video_id).or_default().push(i);
    }
    let mut groups: Vec<Group<'_>> = by_video
        .into_iter()
        .map(|(video_id, members)| Group {
            earliest: members
                .iter()
                .map(|&i| records[i].created_at)
                .min()
                .expect("nonempty"),
            video_id,
            members,
        })
        .collect();
    groups.sort_by(|a, b| (a.earliest, a.video_id).cmp(&(b.earliest, b.video_id)));
    groups
}

/// Orders video groups by their earliest `created_at` and hands whole groups
/// to train, then valid, then test until each cumulative record target is
/// met. Every part receives at least one group.
pub fn split_chronological_grouped(
    records: &[AdRecord],
    ratios: SplitRatios,
) -> Result<DatasetSplit> {
    ratios.validate()?;
    let groups = groups(records);
    if groups.len() < 3 {
        return Err(Error::TooFewGroups(groups.len()));
    }
    let n = records.len() as f64;
    // Tolerance keeps exact fractions like 1/3 from tipping a group over.
    let tol = 1e-9 * n.max(1.0);
    let train_target = ratios.train * n - tol;
    let valid_target = (ratios.train + ratios.valid) * n - tol;

    let mut split = DatasetSplit::default();
    let mut part = SplitPart::Train;
    let mut assigned = 0usize;
    for (gi, g) in groups.iter().enumerate() {
        let remaining = groups.len() - gi;
        if part == SplitPart::Train
            && !split.train.is_empty()
            && (assigned as f64 >= train_target || remaining <= 2)
        {
            part = SplitPart::Valid;
        }
        if part == SplitPart::Valid
            && !split.valid.is_empty()
            && (assigned as f64 >= valid_target || remaining <= 1)
        {
            part = SplitPart::Test;
        }
        let dst = match part {
            SplitPart::Train => &mut split.train,
            SplitPart::Valid => &mut split.valid,
            SplitPart::Test => &mut split.test,
        };
        dst.extend_from_slice(&g.members);
        assigned += g.members.len();
    }
    Ok(split)
}

/// Checks the split invariants: every record used exactly once, no video in
/// two parts, chronological order at group granularity, every record passes
/// the filters. Returns a description of the first violation.
pub fn check_split(records: &[AdRecord], split: &DatasetSplit) -> std::result::Result<(), String> {
    let mut seen = vec![false; records.len()];
    for &i in split.train.iter().chain(&split.valid).chain(&split.test) {
        if i >= records.len() {
            return Err(format!("index {i} out of range"));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(format!("record {i} assigned twice"));
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(format!("record {i} unassigned"));
    }
    let parts = [SplitPart::Train, SplitPart::Valid, SplitPart::Test];
    let videos: Vec<HashSet<&str>> = parts
        .iter()
        .map(|&p| {
            split
                .part(p)
                .iter()
                .map(|&i| records[i].video_id.as_str())
                .collect()
        })
        .collect();
    for a in 0..3 {
        for b in a + 1..3 {
            if let Some(v) = videos[a].intersection(&videos[b]).next() {
                return Err(format!("video {v} in {:?} and {:?}", parts[a], parts[b]));
            }
        }
    }
    // Group start dates, keyed by video.
    let mut earliest: BTreeMap<&str, DateTime<Utc>> = BTreeMap::new();
    for r in records {
        let e = earliest.entry(&r.video_id).or_insert(r.created_at);
        *e = (*e).min(r.created_at);
    }
    let span = |p: SplitPart| {
        let dates = split
            .part(p)
            .iter()
            .map(|&i| earliest[records[i].video_id.as_str()]);
        (dates.clone().min(), dates.max())
    };
    for w in parts.windows(2) {
        let (_, prev_max) = span(w[0]);
        let (next_min, _) = span(w[1]);
        if let (Some(pm), Some(nm)) = (prev_max, next_min) {
            if nm < pm {
                return Err(format!("{:?} starts before {:?} ends", w[1], w[0]));
            }
        }
    }
    if let Some(r) = records.iter().find(|r| check_record(r).is_some()) {
        return Err(format!("record {} fails the filters", r.ad_id));
    }
    Ok(())
}
