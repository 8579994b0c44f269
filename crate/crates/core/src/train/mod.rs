//! Loss, optimizer, the epoch loop, metrics and hyperparameter search.

mod config;
mod fit;
mod grid;
mod metrics;
mod optim;

pub use config::TrainingConfig;
pub use fit::{history_jsonl, stream_seed, train_step, EpochRecord, Experiment, FitOutcome, FitStatus};
pub use grid::{grid_search, GridCandidates, GridResult, GridRun};
pub use metrics::{compute_metrics, smooth_l1, MetricsAccumulator, MetricsReport, StepMetrics};
pub use optim::{clip_global_norm, Adam};
