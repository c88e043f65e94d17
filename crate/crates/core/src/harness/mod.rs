//! Experiment orchestration: configuration, training runs, evaluation and
//! result tables.

mod config;
mod results;
mod run;

pub use config::{Algorithm, ConfigError, ExperimentConfig, SEED_ENV};
pub use results::{
    aggregate_checkpoints, final_checkpoint, read_results, summarize, write_results, write_summary,
    CheckpointMetrics, MetricsRow, SeedMetrics, SummaryRow, LONG_RUN_WINDOW,
};
pub use run::{
    checkpoint_path, evaluate, evaluate_policy, rng_stream, run_episode, run_experiment, run_seed,
    train_seed, Actor, EpisodeStats, EvalResult, Generators, SeedTraining, TrainLogRow,
};

use thiserror::Error;

use crate::env::EnvError;
use crate::guidance::GuidanceError;
use crate::learner::TrainError;
use crate::nn::NnError;
use crate::replay::ReplayError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint does not fit the configuration: {0}")]
    SpecMismatch(String),
    #[error("missing checkpoints: {0}")]
    MissingCheckpoints(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
