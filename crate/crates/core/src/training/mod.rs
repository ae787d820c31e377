//! Losses, the two-phase training loop, evaluation, and hyperparameter
//! search.

mod grid;
mod loss;
mod report;
mod trainer;

pub use grid::{cell_seed, run_grid, select_best, GridCell, GridResult};
pub use loss::{attention_loss, cross_entropy, optim_value};
pub use report::{metrics_csv, metrics_row, summary_text, write_report, METRICS_HEADER};
pub use trainer::{
    aggregate_seeds, evaluate, lambda_at, mean_and_sample_sd, objective_and_gradient, objective_value,
    train_two_phase, train_two_phase_observed, EpochMetrics, EvalResult, Phase, Teachers, TrainConfig, TrainEvent,
    TrainReport, TrainRun,
};
