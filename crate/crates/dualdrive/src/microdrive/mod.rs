//! Deterministic seeded 2D driving micro-environment with paired
//! privileged/raw observations and a 39-action discrete control space.

pub mod actions;
pub mod env;
pub mod oracle;
pub mod render;
pub mod trace;
pub mod world;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown scenario: {0} (expected lane-follow-signal, lead-vehicle-brake, merge-cut-in)")]
    UnknownScenario(String),
    #[error("action index {0} out of range [0, 39)")]
    ActionOutOfRange(usize),
    #[error("cannot step a terminated episode")]
    EpisodeTerminated,
}

pub use actions::{action_decode, action_encode, ControlTuple, NUM_ACTIONS};
pub use env::Env;
pub use render::{PairedObservation, PrivilegedObs, RawObs, CHANNELS};
pub use world::{
    score_route, EnvConfig, InfractionCounts, RouteScore, Scenario, StepOutcome, WorldState,
};
