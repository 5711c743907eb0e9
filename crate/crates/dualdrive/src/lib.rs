//! Dual-stream model-based reinforcement learning on a desk-scale 2D
//! driving micro-simulator: a privileged world model and policy trained
//! first, then a raw-sensor world model and policy trained under rollout
//! and head guidance from the frozen privileged stream.

pub mod numcore;
pub mod microdrive;
pub mod worldmodel;
pub mod policy;
pub mod guidance;
pub mod config;
pub mod trainer;
pub mod gradcheck;
pub mod cli;
