//! Metrics, statistical tests and the repeated-trial experiment runner.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod stats;

pub use metrics::{average_ranks, precision_at_n, roc_auc};
pub use stats::{friedman_test, mean_ranks, nemenyi_cd, wilcoxon_rank_sum, FriedmanResult};
pub use experiment::{run_experiment, Method, Mode, TrialRecord};
pub use report::{ExperimentReport, MethodSummary};
