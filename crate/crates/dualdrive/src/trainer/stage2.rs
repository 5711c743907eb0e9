//! Stage 2: raw-sensor world model and policy training under guidance. The
//! privileged stream loads from the stage-1 checkpoint and stays frozen;
//! the raw stream trains with the world-model loss plus rollout guidance,
//! and the raw policy fine-tunes on head-guided imagination with action
//! distillation from the privileged policy.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::Config;
use crate::guidance::{paired_imagine, paired_wm_loss, transfer_init, SamplingMode, TransferMode};
use crate::numcore::{Array, Tape};
use crate::policy::{actor_loss, critic_loss, distill_loss, return_scale_update, ActMode};
use crate::worldmodel::LatentSampling;

use super::buffer::ReplayBuffer;
use super::checkpoint::{world_hash, Checkpoint, RngSet};
use super::collect::{collect_episode, CollectPolicy};
use super::metrics::MetricsWriter;
use super::stage1::StageOutput;
use super::update::{
    apply_policy_grads, apply_wm_grads, register_policy_optimizers, register_wm_optimizers,
    OptimizerBank,
};
use super::TrainError;

pub fn stage2_train(
    cfg: &Config,
    stage1_ckpt: &Path,
    out_dir: &Path,
) -> Result<StageOutput, TrainError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let env_cfg = cfg.env_config()?;
    let seed = cfg.u64("trainer.seed")?;

    let stage1 = Checkpoint::load(stage1_ckpt, cfg)?;
    if stage1.stage != 1 {
        return Err(TrainError::Checkpoint(format!(
            "expected a stage-1 checkpoint, found stage {}",
            stage1.stage
        )));
    }
    let priv_wm = stage1.priv_wm;
    let priv_policy = stage1.priv_policy;

    let transfer = cfg.transfer_spec()?;
    let raw_heads = (
        cfg.bool("guidance.raw_reward_head")?,
        cfg.bool("guidance.raw_continue_head")?,
    );
    let head_guidance = cfg.bool("guidance.head_guidance")?;
    if !head_guidance && !(raw_heads.0 && raw_heads.1) {
        return Err(TrainError::Checkpoint(
            "no-head-guidance requires raw-reward-head and raw-continue-head".into(),
        ));
    }
    let mut init_rng = crate::numcore::Rng::new(seed).split(0x142);
    let (mut raw_wm, mut raw_policy) =
        transfer_init(&priv_wm, &priv_policy, &transfer, raw_heads, &mut init_rng)?;
    let finetune_policy = transfer.policy != TransferMode::CopyFreeze;

    let mut rngs = RngSet::new(seed, 2);
    let mut bank: OptimizerBank = Vec::new();
    register_wm_optimizers(
        &mut bank,
        &raw_wm,
        "wm.raw",
        cfg.f64("wm.lr")?,
        cfg.f64("wm.weight_decay")?,
    );
    register_policy_optimizers(
        &mut bank,
        &raw_policy,
        "policy.raw",
        cfg.f64("policy.lr")?,
        cfg.f64("policy.weight_decay")?,
    );

    let frozen_rssm = transfer.rssm.frozen();
    let frozen_decoder = transfer.decoder.frozen();
    let skip_component = move |name: &str| -> bool {
        match name {
            "gru" | "post" | "prior" => frozen_rssm,
            "dec" => frozen_decoder,
            _ => false,
        }
    };

    let mut buffer = ReplayBuffer::new(
        env_cfg.clone(),
        true,
        cfg.usize("trainer.buffer_capacity")?,
    );
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = MetricsWriter::create(&metrics_path, cfg.bool("metrics.wall_clock")?)?;

    let scenarios = cfg.scenarios()?;
    let wm_weights = cfg.wm_weights()?;
    let guidance_weights = cfg.guidance_weights()?;
    let kl_reverse = cfg.bool("guidance.kl_reverse")?;
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
    let iterations = cfg.usize("trainer.iterations")?;
    let mix_priv = cfg.f64("trainer.mix_priv_collect")?;
    let distill_base = cfg.f64("distill.weight")?;
    let metrics_every = cfg.u64("metrics.every")?.max(1);
    let total_updates = (iterations * updates_per_iter) as f64;

    let mut env_steps: u64 = 0;
    let mut updates: u64 = 0;
    let mut iterations_done: u64 = 0;
    let prefill = if iterations == 0 {
        0
    } else {
        cfg.usize("trainer.prefill_episodes")?
    };

    // Stage-2 warmup already has a competent transferred policy; collect
    // with it from the start.
    for _ in 0..prefill {
        let scenario = scenarios[rngs.env_seed.index(scenarios.len())];
        let ep_seed = rngs.env_seed.next_u64();
        let ep = collect_episode(
            &env_cfg,
            scenario,
            ep_seed,
            CollectPolicy::Raw {
                wm: &raw_wm,
                policy: &raw_policy,
            },
            ActMode::Sample,
            &mut rngs.collect,
        )?;
        env_steps += ep.len() as u64;
        buffer.push(ep);
    }

    for _ in 0..iterations {
        if env_steps >= budget {
            break;
        }
        iterations_done += 1;
        let scenario = scenarios[rngs.env_seed.index(scenarios.len())];
        let ep_seed = rngs.env_seed.next_u64();
        // Mixed collection: mostly the raw policy on raw observations, a
        // scripted share of privileged-policy episodes.
        let use_priv = rngs.mix.chance(mix_priv);
        let ep = if use_priv {
            collect_episode(
                &env_cfg,
                scenario,
                ep_seed,
                CollectPolicy::Privileged {
                    wm: &priv_wm,
                    policy: &priv_policy,
                },
                ActMode::Sample,
                &mut rngs.collect,
            )?
        } else {
            collect_episode(
                &env_cfg,
                scenario,
                ep_seed,
                CollectPolicy::Raw {
                    wm: &raw_wm,
                    policy: &raw_policy,
                },
                ActMode::Sample,
                &mut rngs.collect,
            )?
        };
        env_steps += ep.len() as u64;
        let mut ep_metrics = BTreeMap::new();
        ep_metrics.insert("episode/return".into(), ep.total_reward());
        ep_metrics.insert("episode/steps".into(), ep.len() as f64);
        ep_metrics.insert("episode/progress".into(), ep.progress);
        ep_metrics.insert("episode/success".into(), ep.success as u8 as f64);
        ep_metrics.insert("episode/privileged_driver".into(), use_priv as u8 as f64);
        metrics.record(env_steps, &ep_metrics)?;
        buffer.push(ep);

        for _ in 0..updates_per_iter {
            let batch = match buffer.sample_sequences(batch_size, seq_len, &mut rngs.batch) {
                Ok(b) => b,
                Err(TrainError::Warmup(_)) => break,
                Err(e) => return Err(e),
            };

            // Raw world-model update with rollout guidance; the privileged
            // model is bound as constants and receives no gradients.
            let tape = Tape::new();
            let raw_bound = raw_wm.bind(&tape, true);
            let priv_bound = priv_wm.bind(&tape, false);
            let out = paired_wm_loss(
                &tape,
                &raw_wm,
                &raw_bound,
                &priv_wm,
                &priv_bound,
                &batch,
                &wm_weights,
                &guidance_weights,
                kl_reverse,
                LatentSampling::Sample,
                &mut rngs.wm,
            )?;
            let grads = tape.backward(out.total)?;
            let wm_norm = apply_wm_grads(
                &mut raw_wm,
                &raw_bound,
                &grads,
                &mut bank,
                "wm.raw",
                &skip_component,
                wm_clip,
            )?;

            let mut m = BTreeMap::new();
            m.insert("wm/total".into(), tape.item(out.total));
            m.insert("wm/decoder".into(), out.decoder_nll);
            m.insert("wm/reward".into(), out.reward_nll);
            m.insert("wm/continue".into(), out.continue_nll);
            m.insert("wm/dyn".into(), out.dynamics);
            m.insert("wm/rep".into(), out.representation);
            m.insert("wm/grad_norm".into(), wm_norm);
            m.insert("guidance/e_mse".into(), out.guidance.e_mse);
            m.insert("guidance/s_kl".into(), out.guidance.s_kl);
            m.insert("guidance/h_mse".into(), out.guidance.h_mse);
            m.insert("guidance/total".into(), out.guidance_total);

            if finetune_policy {
                // Paired imagination with head guidance.
                let (raw_h0, raw_s0, priv_h0) =
                    select_paired_starts(&out, imag_starts, &mut rngs.imag);
                let (traj, divergence) = paired_imagine(
                    &raw_wm,
                    &priv_wm,
                    &raw_policy,
                    raw_h0,
                    raw_s0,
                    priv_h0,
                    horizon,
                    SamplingMode::Shared,
                    head_guidance,
                    gamma,
                    lambda,
                    index_shift,
                    &mut rngs.imag,
                    &mut rngs.collect,
                )?;
                raw_policy.return_scale = return_scale_update(
                    raw_policy.return_scale,
                    &traj.flat_returns(),
                    ema_decay,
                )?;
                let advantages = traj.advantages(raw_policy.return_scale);
                let decision = traj.decision_latents();
                let taken = traj.taken_actions();

                // Distillation on the paired buffer states: teacher acts on
                // the privileged latents, student on the raw latents.
                let distill_w =
                    distill_base * (1.0 - updates as f64 / (0.5 * total_updates)).max(0.0);
                let (teacher_latents, student_latents) = paired_latent_rows(&out);
                let teacher_logits = priv_policy.logits_plain(&teacher_latents);

                let atape = Tape::new();
                let abound = raw_policy.bind(&atape, true);
                let alogits =
                    raw_policy.actor_logits(&atape, &abound, atape.constant(decision.clone()));
                let mut aloss = actor_loss(&atape, alogits, &taken, &advantages, eta)?;
                if distill_w > 0.0 {
                    let student_logits = raw_policy.actor_logits(
                        &atape,
                        &abound,
                        atape.constant(student_latents),
                    );
                    let teacher = atape.constant(teacher_logits);
                    let d = distill_loss(&atape, teacher, student_logits)?;
                    aloss = atape.add(aloss, atape.mul_scalar(d, distill_w));
                    m.insert("distill/loss".into(), atape.item(d));
                    m.insert("distill/weight".into(), distill_w);
                }
                let aloss_val = atape.item(aloss);
                let actor_norm = apply_policy_grads(
                    &atape,
                    aloss,
                    &mut raw_policy.actor,
                    &abound.actor,
                    &mut bank,
                    "policy.raw.actor",
                    policy_clip,
                )?;

                let ctape = Tape::new();
                let cbound = raw_policy.bind(&ctape, true);
                let values =
                    raw_policy.critic_values(&ctape, &cbound, ctape.constant(decision));
                let targets = ctape.constant(
                    Array::from_vec(vec![taken.len(), 1], traj.return_targets()).unwrap(),
                );
                let closs = critic_loss(&ctape, values, targets);
                let closs_val = ctape.item(closs);
                let critic_norm = apply_policy_grads(
                    &ctape,
                    closs,
                    &mut raw_policy.critic,
                    &cbound.critic,
                    &mut bank,
                    "policy.raw.critic",
                    policy_clip,
                )?;

                m.insert("actor/loss".into(), aloss_val);
                m.insert("actor/grad_norm".into(), actor_norm);
                m.insert("critic/loss".into(), closs_val);
                m.insert("critic/grad_norm".into(), critic_norm);
                m.insert("policy/scale".into(), raw_policy.return_scale);
                m.insert("policy/mean_return".into(), traj.mean_return());
                m.insert(
                    "imagine/h_divergence".into(),
                    divergence.iter().sum::<f64>() / divergence.len().max(1) as f64,
                );
            }

            updates += 1;
            if updates % metrics_every == 0 {
                metrics.record(env_steps, &m)?;
            }
        }
    }

    metrics.flush()?;
    let ckpt = Checkpoint {
        stage: 2,
        config_text: cfg.to_text(),
        full_hash: cfg.hash(),
        world_hash: world_hash(cfg),
        env_steps,
        updates,
        iterations_done,
        metrics_cursor: metrics.records_written(),
        rngs: rngs.clone(),
        priv_wm,
        priv_policy,
        raw_wm: Some(raw_wm),
        raw_policy: Some(raw_policy),
        optimizers: bank,
        episodes: buffer.episodes().cloned().collect(),
        buffer_next_id: buffer.next_id(),
        paired_buffer: true,
    };
    let checkpoint_path = out_dir.join("ckpt_final.r2d1");
    ckpt.save(&checkpoint_path)?;

    Ok(StageOutput {
        checkpoint_path,
        metrics_path,
        env_steps,
        updates,
    })
}

/// Subsample aligned (raw h, raw s, privileged h) rows from the paired
/// world-model pass, t-major.
fn select_paired_starts(
    out: &crate::guidance::PairedWmOutput,
    count: usize,
    rng: &mut crate::numcore::Rng,
) -> (Array, Array, Array) {
    let t_len = out.raw_h.len();
    let b = out.raw_h[0].rows();
    let dh = out.raw_h[0].cols();
    let ds = out.raw_s[0].cols();
    let total = t_len * b;
    let take = count.min(total);
    let mut rh = Vec::with_capacity(take * dh);
    let mut rs = Vec::with_capacity(take * ds);
    let mut ph = Vec::with_capacity(take * dh);
    for _ in 0..take {
        let idx = rng.index(total);
        let (t, row) = (idx / b, idx % b);
        rh.extend_from_slice(&out.raw_h[t].data()[row * dh..(row + 1) * dh]);
        rs.extend_from_slice(&out.raw_s[t].data()[row * ds..(row + 1) * ds]);
        ph.extend_from_slice(&out.priv_h[t].data()[row * dh..(row + 1) * dh]);
    }
    (
        Array::from_vec(vec![take, dh], rh).unwrap(),
        Array::from_vec(vec![take, ds], rs).unwrap(),
        Array::from_vec(vec![take, dh], ph).unwrap(),
    )
}

/// All paired posterior latents as rows: (privileged h ++ shared s,
/// raw h ++ shared s).
fn paired_latent_rows(out: &crate::guidance::PairedWmOutput) -> (Array, Array) {
    let t_len = out.raw_h.len();
    let b = out.raw_h[0].rows();
    let dh = out.raw_h[0].cols();
    let ds = out.raw_s[0].cols();
    let mut teacher = Vec::with_capacity(t_len * b * (dh + ds));
    let mut student = Vec::with_capacity(t_len * b * (dh + ds));
    for t in 0..t_len {
        for row in 0..b {
            teacher.extend_from_slice(&out.priv_h[t].data()[row * dh..(row + 1) * dh]);
            teacher.extend_from_slice(&out.raw_s[t].data()[row * ds..(row + 1) * ds]);
            student.extend_from_slice(&out.raw_h[t].data()[row * dh..(row + 1) * dh]);
            student.extend_from_slice(&out.raw_s[t].data()[row * ds..(row + 1) * ds]);
        }
    }
    (
        Array::from_vec(vec![t_len * b, dh + ds], teacher).unwrap(),
        Array::from_vec(vec![t_len * b, dh + ds], student).unwrap(),
    )
}
