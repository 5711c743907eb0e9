//! Dual-stream guidance: the rollout alignment loss tying raw-stream
//! latents to the frozen privileged stream, paired deduction with a single
//! shared stochastic sample, head guidance for rewards and continue flags,
//! and privileged-to-raw parameter transfer.

pub mod paired;
pub mod rollout;
pub mod transfer;

pub use paired::{paired_imagine, paired_wm_loss, PairedWmOutput, SamplingMode};
pub use rollout::{rollout_guidance_loss, GuidanceTerms, GuidanceWeights, PairedRollout, PairedStep};
pub use transfer::{transfer_init, TransferMode, TransferSpec};
