//! Differentiable array computation: shaped arrays, a reverse-mode tape,
//! optimizers, categorical distribution utilities, order statistics, and
//! deterministic counter-based randomness.

pub mod array;
pub mod container;
pub mod dist;
pub mod math;
pub mod optim;
pub mod params;
pub mod rng;
pub mod stats;
pub mod tape;

pub use array::{Array, NumError};
pub use optim::OptimizerState;
pub use params::{BoundParams, ParameterSet};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
