//! Environment interaction: run one episode under a policy and store the
//! replay recipe.

use crate::microdrive::{Env, EnvConfig, Scenario, NUM_ACTIONS};
use crate::numcore::Rng;
use crate::policy::{ActMode, PolicyParams};
use crate::worldmodel::WorldModel;

use super::buffer::EpisodeRecipe;
use super::filter::LatentFilter;
use super::TrainError;

pub enum CollectPolicy<'a> {
    /// Uniform random actions (warmup prefill).
    Random,
    /// Act from privileged observations through the privileged model.
    Privileged {
        wm: &'a WorldModel,
        policy: &'a PolicyParams,
    },
    /// Act from raw observations through the raw model.
    Raw {
        wm: &'a WorldModel,
        policy: &'a PolicyParams,
    },
}

pub fn collect_episode(
    env_cfg: &EnvConfig,
    scenario: Scenario,
    seed: u64,
    driver: CollectPolicy<'_>,
    mode: ActMode,
    rng: &mut Rng,
) -> Result<EpisodeRecipe, TrainError> {
    let mut env = Env::reset(env_cfg.clone(), seed, scenario);
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut continues = Vec::new();

    let mut filter = match &driver {
        CollectPolicy::Random => None,
        CollectPolicy::Privileged { wm, .. } | CollectPolicy::Raw { wm, .. } => {
            Some(LatentFilter::new(wm))
        }
    };

    loop {
        let action = match &driver {
            CollectPolicy::Random => rng.index(NUM_ACTIONS),
            CollectPolicy::Privileged { policy, .. } => {
                let obs = env.render_privileged();
                let latent = filter.as_mut().unwrap().observe_priv(&obs, rng)?;
                policy.act(&latent, mode, rng)
            }
            CollectPolicy::Raw { policy, .. } => {
                let obs = env.render_raw();
                let latent = filter.as_mut().unwrap().observe_raw(&obs, rng)?;
                policy.act(&latent, mode, rng)
            }
        };
        let outcome = env.step(action)?;
        if let Some(f) = filter.as_mut() {
            f.note_action(action);
        }
        actions.push(action);
        rewards.push(outcome.reward);
        continues.push(outcome.continue_flag);
        if outcome.continue_flag == 0.0 {
            break;
        }
    }

    Ok(EpisodeRecipe {
        id: 0,
        scenario,
        seed,
        actions,
        rewards,
        continues,
        progress: env.state.progress,
        infractions: env.state.infractions.clone(),
        success: env.state.success(),
    })
}
