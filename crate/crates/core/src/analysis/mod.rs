//! Correlation statistics, attention aggregation and the ablation campaign.

mod ablation;
mod attention;
mod correlation;
mod stats;

pub use ablation::{
    architecture_specs, meta_exclusion_specs, run_ablation, run_ablation_campaign,
    text_exclusion_specs, write_campaign_csv, write_campaign_json, AblationResult, AblationSpec,
    CampaignBase, MetaVariant,
};
pub use attention::{collect_attention, AttentionReport, AttentionRow};
pub use correlation::{
    correlation_table, CorrelationOptions, CorrelationTable, CtrScale, EtaForm,
    QualitativeCorrelation, QuantitativeCorrelation,
};
pub use stats::{correlation_ratio, correlation_ratio_grouped, pearson, rmse, CorrelationRatio};
