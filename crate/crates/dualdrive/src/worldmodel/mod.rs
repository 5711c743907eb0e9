//! The recurrent state-space world model shared by both streams: encoder,
//! deterministic/stochastic recurrence, posterior/prior, heads, and the
//! world-model training loss.

pub mod batch;
pub mod config;
pub mod loss;
pub mod model;

pub use batch::SequenceBatch;
pub use config::ModelConfig;
pub use loss::{wm_loss, LatentSampling, PosteriorLatents, WmLoss, WmLossWeights};
pub use model::{action_rows, BoundWm, Stream, WmParams, WorldModel};
