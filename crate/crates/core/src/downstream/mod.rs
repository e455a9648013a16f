//! Consumers of derived crosses: cross columns, L1 logistic regression,
//! baselines and evaluation reports.

pub mod baselines;
pub mod lr;
pub mod materialize;
pub mod metrics;

pub use baselines::{
    cmi_rank_pairs, per_feature_auc, plugin_mutual_information, random_cross_baseline, score_auc_correlation,
    CrossSummary, EvaluationReport,
};
pub use lr::{fit_and_score, train_logistic_regression, LrConfig, LrModel};
pub use materialize::{cross_name, materialize_crosses, materialize_crosses_many, DEFAULT_CROSS_CARDINALITY_CAP};
pub use metrics::{auc, average_ranks, spearman};
