//! Privileged-to-raw initialization: RSSM and decoder copied across
//! streams, raw encoder fresh, policy carried over — with per-component
//! switches for the parameter-sharing and fine-tuning ablations.

use crate::numcore::{NumError, Rng};
use crate::policy::PolicyParams;
use crate::worldmodel::{Stream, WorldModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferMode {
    Copy,
    CopyFreeze,
    Fresh,
}

impl TransferMode {
    pub fn copies(&self) -> bool {
        matches!(self, TransferMode::Copy | TransferMode::CopyFreeze)
    }

    pub fn frozen(&self) -> bool {
        matches!(self, TransferMode::CopyFreeze)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TransferSpec {
    pub rssm: TransferMode,
    pub decoder: TransferMode,
    pub policy: TransferMode,
}

impl Default for TransferSpec {
    fn default() -> Self {
        Self {
            rssm: TransferMode::Copy,
            decoder: TransferMode::Copy,
            policy: TransferMode::Copy,
        }
    }
}

/// Build the raw-stream world model and policy from the trained privileged
/// stream. The raw encoder is always freshly initialized (its input space
/// differs); recurrence, posterior, prior and decoder copy per the spec.
pub fn transfer_init(
    priv_wm: &WorldModel,
    priv_policy: &PolicyParams,
    spec: &TransferSpec,
    raw_heads: (bool, bool),
    rng: &mut Rng,
) -> Result<(WorldModel, PolicyParams), NumError> {
    let mut raw_wm =
        WorldModel::with_heads(priv_wm.cfg.clone(), Stream::Raw, raw_heads.0, raw_heads.1, rng);
    if spec.rssm.copies() {
        raw_wm.params.gru.copy_from(&priv_wm.params.gru)?;
        raw_wm
            .params
            .prior
            .copy_from(&priv_wm.params.prior)?;
        // Posterior input width matches because both streams share grid
        // geometry; copying keeps the latent spaces aligned at step zero.
        raw_wm
            .params
            .posterior
            .copy_from(&priv_wm.params.posterior)?;
    }
    if spec.decoder.copies() {
        raw_wm.params.decoder.copy_from(&priv_wm.params.decoder)?;
    }

    let mut raw_policy = PolicyParams::new(
        priv_wm.cfg.latent_dim(),
        priv_policy.actor.get("l0.w").shape()[1],
        rng,
    );
    if spec.policy.copies() {
        raw_policy.actor.copy_from(&priv_policy.actor)?;
        raw_policy.critic.copy_from(&priv_policy.critic)?;
        raw_policy.return_scale = priv_policy.return_scale;
    }
    Ok((raw_wm, raw_policy))
}
