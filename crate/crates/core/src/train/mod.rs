//! Training recipe: weighted cross-entropy, RMSProp, patience-based early
//! stopping with best-weight restore, chance-level checkpoint selection for
//! adversarial runs, grid search, seed ensembles and the frozen-embedding
//! confound probe.

mod config;
mod ledger;
mod optim;
mod probe;
mod run;
mod select;

pub use config::{HyperGrid, TrainConfig};
pub use ledger::{append_ledger, ledger_line, read_ledger, LedgerEntry};
pub use optim::{replay_trace, rmsprop_step, EarlyStopper, StopDecision};
pub use probe::{probe_confound, ProbeResult};
pub use run::{
    argmax, class_weights, predict, revalidate, train_run, train_run_with, weighted_ce_mean, EpochMetrics,
    Predictions, RunRecord,
};
pub use select::{
    average_argmax, ensemble_predict, grid_search, is_chance, select_adversarial_checkpoint, GridOutcome, GridTrial,
};
