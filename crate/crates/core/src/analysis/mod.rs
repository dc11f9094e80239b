//! Corpus statistics on relation interdependencies, and evaluation metrics.

mod cond;
mod counts;
mod heatmap;
mod invalid;
mod js;
mod metrics;
mod rules;

use thiserror::Error;

pub use cond::{conditional_matrix, role_index, CondMatrix, Granularity};
pub use counts::{count_correlation, pearson, relation_counts, CountCorrelationMatrix};
pub use heatmap::{heatmap_csv, heatmap_svg};
pub use invalid::{invalid_count, invalid_fraction, Convention, InvalidCount};
pub use js::{js_distance, js_divergence, js_row_distance, JsReport};
pub use metrics::{score, subset_f1, ClassScore, MetricReport};
pub use rules::{derive_incompatibility_rules, roles, rule_records, Role, RuleRecord};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Invalid(String),
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
}
