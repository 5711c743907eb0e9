//! Actor-critic behavior policy: lambda returns, percentile-EMA return
//! normalization, entropy-regularized policy gradients, critic regression,
//! and the teacher-to-student distillation hook.

pub mod imagine;
pub mod losses;
pub mod net;
pub mod returns;

pub use imagine::{complete_returns, imagine, ImaginedTrajectory};
pub use losses::{actor_loss, advantage_divisor, critic_loss, distill_loss};
pub use net::{ActMode, BoundPolicy, PolicyParams};
pub use returns::{lambda_returns, return_scale_update};
