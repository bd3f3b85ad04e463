use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{correlation_ratio, pearson};
use crate::data::{log_transform_ctr, AdRecord, QUALITATIVE_KEYS, QUANTITATIVE_KEYS};
use crate::error::{Error, Result};

/// Which CTR values the statistics are computed against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtrScale {
    /// `log10(100·ctr + 1)`, the regression target.
    #[default]
    Log,
    Raw,
}

/// Report η or η² for categorical keys.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaForm {
    #[default]
    Eta,
    EtaSquared,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    pub scale: CtrScale,
    pub eta_form: EtaForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitativeCorrelation {
    pub key: String,
    pub n_categories: usize,
    pub value: f64,
    /// The CTR values have no variance; `value` is 0 by convention.
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantitativeCorrelation {
    pub key: String,
    /// `None` when the key or the CTR is constant.
    pub r: Option<f64>,
}

/// Correlation ratio per categorical key, Pearson coefficient per
/// continuous key, against the CTR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub options: CorrelationOptions,
    pub n_records: usize,
    pub qualitative: Vec<QualitativeCorrelation>,
    pub quantitative: Vec<QuantitativeCorrelation>,
}

pub fn correlation_table<'a>(
    records: impl IntoIterator<Item = &'a AdRecord>,
    options: CorrelationOptions,
) -> Result<CorrelationTable> {
    let records: Vec<&AdRecord> = records.into_iter().collect();
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation table needs at least 2 labelled records, got {}",
            records.len()
        )));
    }
    let ctr: Vec<f64> = records
        .iter()
        .map(|r| {
            let c = r.ctr()?;
            match options.scale {
                CtrScale::Log => log_transform_ctr(c),
                CtrScale::Raw => Ok(c),
            }
        })
        .collect::<Result<_>>()?;

    let mut qualitative = Vec::with_capacity(QUALITATIVE_KEYS.len());
    for key in QUALITATIVE_KEYS {
        let labels: Vec<&str> = records
            .iter()
            .map(|r| r.qualitative_value(key))
            .collect::<Result<_>>()?;
        let mut distinct = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let cr = correlation_ratio(&labels, &ctr)?;
        qualitative.push(QualitativeCorrelation {
            key: key.to_string(),
            n_categories: distinct.len(),
            value: match options.eta_form {
                EtaForm::Eta => cr.eta,
                EtaForm::EtaSquared => cr.eta * cr.eta,
            },
            zero_variance: cr.zero_variance,
        });
    }

    let mut quantitative = Vec::with_capacity(QUANTITATIVE_KEYS.len());
    for key in QUANTITATIVE_KEYS {
        let x: Vec<f64> = records
            .iter()
            .map(|r| r.quantitative_value(key))
            .collect::<Result<_>>()?;
        quantitative.push(QuantitativeCorrelation {
            key: key.to_string(),
            r: pearson(&x, &ctr)?,
        });
    }

    Ok(CorrelationTable {
        options,
        n_records: records.len(),
        qualitative,
        quantitative,
    })
}

impl CorrelationTable {
    /// Categorical keys by decreasing correlation ratio (ties keep key order).
    pub fn ranked_qualitative(&self) -> Vec<&QualitativeCorrelation> {
        let mut v: Vec<_> = self.qualitative.iter().collect();
        v.sort_by(|a, b| b.value.total_cmp(&a.value));
        v
    }

    /// `key,kind,statistic,value`; undefined coefficients are left empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["key", "kind", "statistic", "value"])?;
        let eta_name = match self.options.eta_form {
            EtaForm::Eta => "correlation_ratio",
            EtaForm::EtaSquared => "correlation_ratio_squared",
        };
        for q in &self.qualitative {
            w.write_record([&q.key, "qualitative", eta_name, &q.value.to_string()])?;
        }
        for q in &self.quantitative {
            let v = q.r.map(|r| r.to_string()).unwrap_or_default();
            w.write_record([q.key.as_str(), "quantitative", "pearson", &v])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
