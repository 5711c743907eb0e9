//! The two-stage training pipeline: replay, collection, world-model and
//! policy updates, guidance-driven stage 2, checkpointing, evaluation.

pub mod buffer;
pub mod checkpoint;
pub mod collect;
pub mod eval;
pub mod filter;
pub mod metrics;
pub mod stage1;
pub mod stage2;
pub mod update;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Num(#[from] crate::numcore::NumError),
    #[error(transparent)]
    Sim(#[from] crate::microdrive::SimError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("warmup: no stored episode admits a window of length {0}")]
    Warmup(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("metrics error: {0}")]
    Metrics(String),
}

pub use buffer::{EpisodeRecipe, ReplayBuffer};
pub use checkpoint::{world_hash, Checkpoint, RngSet};
pub use collect::{collect_episode, CollectPolicy};
pub use eval::{default_suite, evaluate, EvalReport, EvalRow};
pub use filter::LatentFilter;
pub use metrics::MetricsWriter;
pub use stage1::{stage1_train, stage1_train_resumable, StageOutput};
pub use stage2::stage2_train;
