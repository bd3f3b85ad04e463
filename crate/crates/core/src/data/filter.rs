use serde::{Deserialize, Serialize};

use super::AdRecord;

pub const MIN_IMPRESSIONS_EXCLUSIVE: u64 = 500;
pub const MIN_CLICKS: u64 = 1;
pub const MIN_DURATION_S: f64 = 5.0;
pub const MAX_DURATION_S: f64 = 30.0;

/// The rule a rejected record failed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    /// Shown 500 times or fewer.
    TooFewImpressions,
    NoClicks,
    DurationOutOfRange,
}

impl FilterRule {
    pub fn describe(self) -> &'static str {
        match self {
            FilterRule::TooFewImpressions => "impressions must exceed 500",
            FilterRule::NoClicks => "at least one click required",
            FilterRule::DurationOutOfRange => "duration must lie in [5, 30] s",
        }
    }
}

/// `None` if the record passes every rule.
pub fn check_record(r: &AdRecord) -> Option<FilterRule> {
    if r.impressions <= MIN_IMPRESSIONS_EXCLUSIVE {
        Some(FilterRule::TooFewImpressions)
    } else if r.clicks < MIN_CLICKS {
        Some(FilterRule::NoClicks)
    } else if !(MIN_DURATION_S..=MAX_DURATION_S).contains(&r.duration_s) {
        Some(FilterRule::DurationOutOfRange)
    } else {
        None
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<AdRecord>,
    pub rejected: Vec<(AdRecord, FilterRule)>,
}

pub fn filter_records(records: impl IntoIterator<Item = AdRecord>) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for r in records {
        match check_record(&r) {
            None => out.kept.push(r),
            Some(rule) => out.rejected.push((r, rule)),
        }
    }
    out
}
