//! Metrics, significance tests, adjusted probability of success and the
//! cross-domain harness.

mod aps;
mod confusion;
mod cross;
mod stats;

pub use aps::{aps, aps_correlation_report, significance_code, ApsRecord, CorrelationResult, APS_RUNS};
pub use cross::{
    check_modality, cross_domain_eval, merge_speaker_holdouts, render_transfer_table, uar_report, ModelUar, TargetRun,
    TransferMode, UarReport, TRANSFER_ALPHA,
};
pub use confusion::{confusion_delta, uar, uar_present, ConfusionMatrix};
pub use stats::{
    bh_adjust, ln_gamma, paired_t_test, pearson_p, pearson_r, regularized_incomplete_beta, student_t_two_sided,
    TTest,
};
