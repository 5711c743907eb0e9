//! Stage 1: privileged world model and policy training. Collection with the
//! current policy alternates with world-model updates and actor-critic
//! updates on imagined rollouts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::numcore::{Array, Rng, Tape};
use crate::policy::{
    actor_loss, critic_loss, imagine, return_scale_update, ActMode, PolicyParams,
};
use crate::worldmodel::{wm_loss, LatentSampling, PosteriorLatents, Stream, WorldModel};

use super::buffer::ReplayBuffer;
use super::checkpoint::{world_hash, Checkpoint, RngSet};
use super::collect::{collect_episode, CollectPolicy};
use super::metrics::MetricsWriter;
use super::update::{
    apply_policy_grads, apply_wm_grads, register_policy_optimizers, register_wm_optimizers,
    OptimizerBank,
};
use super::TrainError;

pub struct StageOutput {
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub env_steps: u64,
    pub updates: u64,
}

/// Pick `count` start rows out of the posterior latents, t-major.
pub fn select_starts(
    latents: &PosteriorLatents,
    count: usize,
    rng: &mut Rng,
) -> (Array, Array) {
    let t_len = latents.h.len();
    let b = latents.h[0].rows();
    let dh = latents.h[0].cols();
    let ds = latents.s[0].cols();
    let total = t_len * b;
    let take = count.min(total);
    let mut h_data = Vec::with_capacity(take * dh);
    let mut s_data = Vec::with_capacity(take * ds);
    for _ in 0..take {
        let idx = rng.index(total);
        let (t, row) = (idx / b, idx % b);
        h_data.extend_from_slice(&latents.h[t].data()[row * dh..(row + 1) * dh]);
        s_data.extend_from_slice(&latents.s[t].data()[row * ds..(row + 1) * ds]);
    }
    (
        Array::from_vec(vec![take, dh], h_data).unwrap(),
        Array::from_vec(vec![take, ds], s_data).unwrap(),
    )
}

pub fn stage1_train(cfg: &Config, out_dir: &Path) -> Result<StageOutput, TrainError> {
    stage1_train_resumable(cfg, out_dir, None)
}

pub fn stage1_train_resumable(
    cfg: &Config,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<StageOutput, TrainError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let env_cfg = cfg.env_config()?;
    let model_cfg = cfg.model_config()?;
    let seed = cfg.u64("trainer.seed")?;

    let resumed = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path, cfg)?;
            if ckpt.stage != 1 {
                return Err(TrainError::Checkpoint(format!(
                    "cannot resume stage 1 from a stage-{} checkpoint",
                    ckpt.stage
                )));
            }
            Some(ckpt)
        }
        None => None,
    };

    let mut init_rng = Rng::new(seed).split(0x141);
    let mut wm = match &resumed {
        Some(c) => c.priv_wm.clone(),
        None => WorldModel::new(model_cfg.clone(), Stream::Privileged, false, &mut init_rng),
    };
    let mut policy = match &resumed {
        Some(c) => c.priv_policy.clone(),
        None => PolicyParams::new(
            model_cfg.latent_dim(),
            cfg.usize("model.hidden")?,
            &mut init_rng,
        ),
    };
    let mut rngs = match &resumed {
        Some(c) => c.rngs.clone(),
        None => RngSet::new(seed, 1),
    };

    let mut bank: OptimizerBank = match &resumed {
        Some(c) => c.optimizers.clone(),
        None => {
            let mut bank = Vec::new();
            register_wm_optimizers(
                &mut bank,
                &wm,
                "wm.privileged",
                cfg.f64("wm.lr")?,
                cfg.f64("wm.weight_decay")?,
            );
            register_policy_optimizers(
                &mut bank,
                &policy,
                "policy.privileged",
                cfg.f64("policy.lr")?,
                cfg.f64("policy.weight_decay")?,
            );
            bank
        }
    };

    let mut buffer = ReplayBuffer::new(
        env_cfg.clone(),
        false,
        cfg.usize("trainer.buffer_capacity")?,
    );
    if let Some(c) = &resumed {
        buffer.restore(c.episodes.clone(), c.buffer_next_id);
    }
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = MetricsWriter::create_with_cursor(
        &metrics_path,
        cfg.bool("metrics.wall_clock")?,
        resumed.as_ref().map_or(0, |c| c.metrics_cursor),
    )?;

    let scenarios = cfg.scenarios()?;
    let wm_weights = cfg.wm_weights()?;
    let batch_size = cfg.usize("trainer.batch")?;
    let seq_len = cfg.usize("trainer.seq_len")?;
    let updates_per_iter = cfg.usize("trainer.updates_per_iter")?;
    let imag_starts = cfg.usize("trainer.imag_starts")?;
    let horizon = cfg.usize("policy.horizon")?;
    let gamma = cfg.f64("policy.gamma")?;
    let lambda = cfg.f64("policy.lambda")?;
    let index_shift = cfg.bool("policy.index_shift")?;
    let eta = cfg.f64("policy.entropy")?;
    let ema_decay = cfg.f64("policy.ema_decay")?;
    let wm_clip = cfg.f64("wm.grad_clip")?;
    let policy_clip = cfg.f64("policy.grad_clip")?;
    let budget = cfg.u64("trainer.env_step_budget")?;
    let ckpt_every = cfg.usize("trainer.ckpt_every")?;
    let metrics_every = cfg.u64("metrics.every")?.max(1);

    let iterations = cfg.usize("trainer.iterations")?;
    let mut env_steps: u64 = resumed.as_ref().map_or(0, |c| c.env_steps);
    let mut updates: u64 = resumed.as_ref().map_or(0, |c| c.updates);
    let start_iter = resumed.as_ref().map_or(0, |c| c.iterations_done) as usize;
    // N = 0 means "checkpoint the initial state": no collection at all.
    let prefill = if resumed.is_some() || iterations == 0 {
        0
    } else {
        cfg.usize("trainer.prefill_episodes")?
    };

    for _ in 0..prefill {
        let scenario = scenarios[rngs.env_seed.index(scenarios.len())];
        let ep_seed = rngs.env_seed.next_u64();
        let ep = collect_episode(
            &env_cfg,
            scenario,
            ep_seed,
            CollectPolicy::Random,
            ActMode::Sample,
            &mut rngs.collect,
        )?;
        env_steps += ep.len() as u64;
        buffer.push(ep);
    }

    for iter in start_iter..iterations {
        if env_steps >= budget {
            break;
        }
        let scenario = scenarios[rngs.env_seed.index(scenarios.len())];
        let ep_seed = rngs.env_seed.next_u64();
        let ep = collect_episode(
            &env_cfg,
            scenario,
            ep_seed,
            CollectPolicy::Privileged {
                wm: &wm,
                policy: &policy,
            },
            ActMode::Sample,
            &mut rngs.collect,
        )?;
        env_steps += ep.len() as u64;
        let mut ep_metrics = BTreeMap::new();
        ep_metrics.insert("episode/return".into(), ep.total_reward());
        ep_metrics.insert("episode/steps".into(), ep.len() as f64);
        ep_metrics.insert("episode/progress".into(), ep.progress);
        ep_metrics.insert("episode/success".into(), ep.success as u8 as f64);
        metrics.record(env_steps, &ep_metrics)?;
        buffer.push(ep);

        for _ in 0..updates_per_iter {
            let batch = match buffer.sample_sequences(batch_size, seq_len, &mut rngs.batch) {
                Ok(b) => b,
                Err(TrainError::Warmup(_)) => break,
                Err(e) => return Err(e),
            };

            // World-model update.
            let tape = Tape::new();
            let bound = wm.bind(&tape, true);
            let (loss, latents) =
                wm_loss(&tape, &wm, &bound, &batch, &wm_weights, LatentSampling::Sample, &mut rngs.wm)?;
            let grads = tape.backward(loss.total)?;
            let wm_norm = apply_wm_grads(
                &mut wm,
                &bound,
                &grads,
                &mut bank,
                "wm.privileged",
                &|_| false,
                wm_clip,
            )?;

            // Imagination and policy update.
            let (h0, s0) = select_starts(&latents, imag_starts, &mut rngs.imag);
            let traj = imagine(
                &wm, &policy, h0, s0, horizon, gamma, lambda, index_shift, &mut rngs.imag,
            )?;
            policy.return_scale =
                return_scale_update(policy.return_scale, &traj.flat_returns(), ema_decay)?;
            let advantages = traj.advantages(policy.return_scale);
            let decision = traj.decision_latents();
            let taken = traj.taken_actions();

            let atape = Tape::new();
            let abound = policy.bind(&atape, true);
            let alogits = policy.actor_logits(&atape, &abound, atape.constant(decision.clone()));
            let aloss = actor_loss(&atape, alogits, &taken, &advantages, eta)?;
            let aloss_val = atape.item(aloss);
            let entropy = {
                let probs_entropy =
                    crate::numcore::dist::entropy_rows(&atape, alogits, crate::microdrive::NUM_ACTIONS);
                atape.item(atape.mean(probs_entropy))
            };
            let actor_norm = apply_policy_grads(
                &atape,
                aloss,
                &mut policy.actor,
                &abound.actor,
                &mut bank,
                "policy.privileged.actor",
                policy_clip,
            )?;

            let ctape = Tape::new();
            let cbound = policy.bind(&ctape, true);
            let values = policy.critic_values(&ctape, &cbound, ctape.constant(decision));
            let targets = ctape.constant(
                Array::from_vec(vec![taken.len(), 1], traj.return_targets()).unwrap(),
            );
            let closs = critic_loss(&ctape, values, targets);
            let closs_val = ctape.item(closs);
            let critic_norm = apply_policy_grads(
                &ctape,
                closs,
                &mut policy.critic,
                &cbound.critic,
                &mut bank,
                "policy.privileged.critic",
                policy_clip,
            )?;

            updates += 1;
            if updates % metrics_every == 0 {
                let mut m = BTreeMap::new();
                m.insert("wm/total".into(), tape.item(loss.total));
                m.insert("wm/decoder".into(), loss.decoder_nll);
                m.insert("wm/reward".into(), loss.reward_nll);
                m.insert("wm/continue".into(), loss.continue_nll);
                m.insert("wm/dyn".into(), loss.dynamics);
                m.insert("wm/rep".into(), loss.representation);
                m.insert("wm/grad_norm".into(), wm_norm);
                m.insert("actor/loss".into(), aloss_val);
                m.insert("actor/grad_norm".into(), actor_norm);
                m.insert("critic/loss".into(), closs_val);
                m.insert("critic/grad_norm".into(), critic_norm);
                m.insert("policy/entropy".into(), entropy);
                m.insert("policy/scale".into(), policy.return_scale);
                m.insert("policy/mean_return".into(), traj.mean_return());
                metrics.record(env_steps, &m)?;
            }
        }

        if ckpt_every > 0 && (iter + 1) % ckpt_every == 0 {
            let ckpt = build_checkpoint(
                cfg, &wm, &policy, &rngs, &bank, &buffer, env_steps, updates,
                (iter + 1) as u64, &metrics,
            );
            ckpt.save(&out_dir.join(format!("ckpt_{:06}.r2d1", iter + 1)))?;
        }
    }

    metrics.flush()?;
    let ckpt = build_checkpoint(
        cfg, &wm, &policy, &rngs, &bank, &buffer, env_steps, updates, iterations as u64,
        &metrics,
    );
    let checkpoint_path = out_dir.join("ckpt_final.r2d1");
    ckpt.save(&checkpoint_path)?;

    Ok(StageOutput {
        checkpoint_path,
        metrics_path,
        env_steps,
        updates,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_checkpoint(
    cfg: &Config,
    wm: &WorldModel,
    policy: &PolicyParams,
    rngs: &RngSet,
    bank: &OptimizerBank,
    buffer: &ReplayBuffer,
    env_steps: u64,
    updates: u64,
    iterations_done: u64,
    metrics: &MetricsWriter,
) -> Checkpoint {
    Checkpoint {
        stage: 1,
        config_text: cfg.to_text(),
        full_hash: cfg.hash(),
        world_hash: world_hash(cfg),
        env_steps,
        updates,
        iterations_done,
        metrics_cursor: metrics.records_written(),
        rngs: rngs.clone(),
        priv_wm: wm.clone(),
        priv_policy: policy.clone(),
        raw_wm: None,
        raw_policy: None,
        optimizers: bank.clone(),
        episodes: buffer.episodes().cloned().collect(),
        buffer_next_id: buffer.next_id(),
        paired_buffer: false,
    }
}
