//! Paired deduction: the raw and privileged streams step in lockstep on the
//! same actions, with the stochastic sample drawn once from the raw stream
//! and fed to both recurrences. Covers stage-2 world-model training and the
//! head-guided imagination used for raw policy updates.

use crate::numcore::dist::{categorical_sample_st, mixed_probs};
use crate::numcore::{Array, NumError, Rng, Tape, Var};
use crate::policy::{complete_returns, ActMode, ImaginedTrajectory, PolicyParams};
use crate::worldmodel::{
    action_rows, BoundWm, LatentSampling, SequenceBatch, Stream, WmLossWeights, WorldModel,
};

use super::rollout::{rollout_guidance_loss, GuidanceTerms, GuidanceWeights, PairedRollout, PairedStep};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// Sample once from the raw stream; both recurrences consume it.
    Shared,
    /// Each stream samples from its own distribution.
    Independent,
}

/// Stage-2 world-model loss output.
pub struct PairedWmOutput {
    pub total: Var,
    pub decoder_nll: f64,
    pub reward_nll: f64,
    pub continue_nll: f64,
    pub dynamics: f64,
    pub representation: f64,
    pub guidance: GuidanceTerms,
    pub guidance_total: f64,
    /// Detached per-step raw latents (h, s) for imagination starts.
    pub raw_h: Vec<Array>,
    pub raw_s: Vec<Array>,
    /// Detached per-step privileged latents under pseudo-deduction.
    pub priv_h: Vec<Array>,
}

struct Accumulator<'a> {
    tape: &'a Tape,
}

impl<'a> Accumulator<'a> {
    fn add(&self, slot: &mut Option<Var>, v: Var) {
        *slot = Some(match slot.take() {
            Some(acc) => self.tape.add(acc, v),
            None => v,
        });
    }
}

/// Raw-stream world-model loss plus the rollout-guidance loss, computed in
/// one teacher-forced paired unroll. The privileged model must be bound
/// non-trainable; alignment terms can be switched off individually for the
/// ablations.
#[allow(clippy::too_many_arguments)]
pub fn paired_wm_loss(
    tape: &Tape,
    raw_wm: &WorldModel,
    raw_bound: &BoundWm,
    priv_wm: &WorldModel,
    priv_bound: &BoundWm,
    batch: &SequenceBatch,
    weights: &WmLossWeights,
    guidance_weights: &GuidanceWeights,
    kl_reverse: bool,
    sampling: LatentSampling,
    rng: &mut Rng,
) -> Result<PairedWmOutput, NumError> {
    if batch.seq_len < 2 {
        return Err(NumError::InvalidArgument(format!(
            "sequence length {} below minimum 2",
            batch.seq_len
        )));
    }
    assert_eq!(raw_wm.stream, Stream::Raw);
    assert_eq!(priv_wm.stream, Stream::Privileged);
    let cfg = &raw_wm.cfg;
    let b = batch.batch;
    let t_len = batch.seq_len;
    let acc = Accumulator { tape };

    let mut h_raw = tape.constant(Array::zeros(vec![b, cfg.det_dim]));
    let mut h_priv = tape.constant(Array::zeros(vec![b, cfg.det_dim]));
    let mut s_shared = tape.constant(Array::zeros(vec![b, cfg.stoch_dim()]));

    let mut dec_sum = None;
    let mut rew_sum = None;
    let mut cont_sum = None;
    let mut dyn_sum = None;
    let mut rep_sum = None;

    let mut steps = Vec::with_capacity(t_len);
    let mut out_raw_h = Vec::with_capacity(t_len);
    let mut out_raw_s = Vec::with_capacity(t_len);
    let mut out_priv_h = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let action = tape.constant(action_rows(&batch.prev_actions(t)));
        h_raw = raw_wm.sequence_step(tape, raw_bound, h_raw, action, s_shared);
        h_priv = priv_wm.sequence_step(tape, priv_bound, h_priv, action, s_shared);

        let raw_obs = batch.raw_at(t).ok_or_else(|| {
            NumError::InvalidArgument("stage-2 training needs paired raw observations".into())
        })?;
        let (rp, re) = raw_wm.patch_rows_raw(&raw_obs);
        let e_raw = raw_wm.encode(tape, raw_bound, tape.constant(rp), tape.constant(re));
        let (pp, pe) = priv_wm.patch_rows_priv(&batch.priv_at(t));
        let e_priv = priv_wm.encode(tape, priv_bound, tape.constant(pp), tape.constant(pe));

        let q_raw = raw_wm.posterior_logits(tape, raw_bound, h_raw, e_raw);
        let q_priv = priv_wm.posterior_logits(tape, priv_bound, h_priv, e_priv);
        // The one sample per timestep, from the raw stream's posterior.
        let s = match sampling {
            LatentSampling::Sample => {
                categorical_sample_st(tape, q_raw, cfg.classes, cfg.unimix, rng)?
            }
            LatentSampling::Expected => mixed_probs(tape, q_raw, cfg.classes, cfg.unimix),
        };
        let p_raw = raw_wm.prior_logits(tape, raw_bound, h_raw);

        let dec_logits = raw_wm.decode_patches(tape, raw_bound, h_raw, s);
        let target = raw_wm.mask_to_patches(&batch.priv_at(t));
        let nll = tape.bern_nll_logits(dec_logits, &target);
        let per_cell = tape.sum_rows(nll);
        let per_sample = tape.sum_rows(tape.reshape(per_cell, vec![b, cfg.grid_cells()]));
        acc.add(&mut dec_sum, tape.mean(per_sample));

        if raw_bound.reward.is_some() {
            let pred = raw_wm.reward_mean(tape, raw_bound, h_raw, s)?;
            let target = tape.constant(
                Array::from_vec(vec![b, 1], batch.rewards_at(t)).expect("reward rows"),
            );
            let diff = tape.sub(pred, target);
            let sq = tape.mul(diff, diff);
            acc.add(&mut rew_sum, tape.mul_scalar(tape.mean(sq), 0.5));
        }
        if raw_bound.cont.is_some() {
            let logit = raw_wm.continue_logit(tape, raw_bound, h_raw, s)?;
            let target =
                Array::from_vec(vec![b, 1], batch.continues_at(t)).expect("continue rows");
            acc.add(&mut cont_sum, tape.mean(tape.bern_nll_logits(logit, &target)));
        }

        let q_stopped = tape.stop_grad(q_raw);
        let p_stopped = tape.stop_grad(p_raw);
        acc.add(
            &mut dyn_sum,
            free_bits_kl(tape, q_stopped, p_raw, cfg.classes, cfg.unimix)?,
        );
        acc.add(
            &mut rep_sum,
            free_bits_kl(tape, q_raw, p_stopped, cfg.classes, cfg.unimix)?,
        );

        out_raw_h.push(tape.value(h_raw));
        out_raw_s.push(tape.value(s));
        out_priv_h.push(tape.value(h_priv));
        steps.push(PairedStep {
            e_priv,
            e_raw,
            h_priv,
            h_raw,
            s_logits_priv: q_priv,
            s_logits_raw: q_raw,
            shared_sample: s,
        });
        s_shared = s;
    }

    let rollout = PairedRollout {
        steps,
        grid_cells: cfg.grid_cells(),
        feat: cfg.feat,
        classes: cfg.classes,
        unimix: cfg.unimix,
    };
    let (guidance_total, guidance_terms) =
        rollout_guidance_loss(tape, &rollout, guidance_weights, kl_reverse)?;

    let scale = 1.0 / t_len as f64;
    let dec = tape.mul_scalar(dec_sum.unwrap(), scale);
    let rew = rew_sum.map(|v| tape.mul_scalar(v, scale));
    let cont = cont_sum.map(|v| tape.mul_scalar(v, scale));
    let dynamics = tape.mul_scalar(dyn_sum.unwrap(), scale);
    let representation = tape.mul_scalar(rep_sum.unwrap(), scale);

    let mut pred = dec;
    if let Some(r) = rew {
        pred = tape.add(pred, r);
    }
    if let Some(c) = cont {
        pred = tape.add(pred, c);
    }
    let mut total = tape.mul_scalar(pred, weights.pred);
    total = tape.add(total, tape.mul_scalar(dynamics, weights.dynamics));
    total = tape.add(total, tape.mul_scalar(representation, weights.representation));
    total = tape.add(total, guidance_total);

    Ok(PairedWmOutput {
        total,
        decoder_nll: tape.item(dec),
        reward_nll: rew.map(|v| tape.item(v)).unwrap_or(0.0),
        continue_nll: cont.map(|v| tape.item(v)).unwrap_or(0.0),
        dynamics: tape.item(dynamics),
        representation: tape.item(representation),
        guidance: guidance_terms,
        guidance_total: tape.item(guidance_total),
        raw_h: out_raw_h,
        raw_s: out_raw_s,
        priv_h: out_priv_h,
    })
}

fn free_bits_kl(
    tape: &Tape,
    q: Var,
    p: Var,
    classes: usize,
    unimix: f64,
) -> Result<Var, NumError> {
    let grouped = crate::numcore::dist::kl_categorical_grouped(tape, q, p, classes, unimix)?;
    let per_sample = tape.sum_rows(grouped);
    Ok(tape.mean(tape.clamp_min(per_sample, 1.0)))
}

/// Imagination for the raw policy: the raw model deducts strictly (prior
/// only) while the frozen privileged model rolls in lockstep via
/// pseudo-deduction. Rewards and continue flags come from the privileged
/// heads under head guidance, or from the raw model's own heads when that
/// ablation is active.
///
/// Draws for the stochastic state come from `sample_rng` (exactly one per
/// group per timestep in shared mode); action sampling uses `action_rng`.
#[allow(clippy::too_many_arguments)]
pub fn paired_imagine(
    raw_wm: &WorldModel,
    priv_wm: &WorldModel,
    policy: &PolicyParams,
    start_raw_h: Array,
    start_raw_s: Array,
    start_priv_h: Array,
    horizon: usize,
    mode: SamplingMode,
    head_guidance: bool,
    gamma: f64,
    lambda: f64,
    index_shift: bool,
    sample_rng: &mut Rng,
    action_rng: &mut Rng,
) -> Result<(ImaginedTrajectory, Vec<f64>), NumError> {
    let n = start_raw_h.rows();
    let cfg = &raw_wm.cfg;
    let tape = Tape::new();
    let raw_bound = raw_wm.bind(&tape, false);
    let priv_bound = priv_wm.bind(&tape, false);

    let mut h_raw = tape.constant(start_raw_h);
    let mut h_priv = tape.constant(start_priv_h);
    let mut s_raw = tape.constant(start_raw_s);
    // Privileged stream consumes the shared sample; in independent mode it
    // tracks its own.
    let mut s_priv = s_raw;

    let mut latents = vec![concat_rows(&tape.value(h_raw), &tape.value(s_raw))];
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut continues = Vec::with_capacity(horizon);
    let mut divergence = Vec::with_capacity(horizon);

    for _ in 0..horizon {
        let act = policy.act_rows(latents.last().unwrap(), ActMode::Sample, action_rng);
        let a = tape.constant(action_rows(
            &act.iter().map(|&x| Some(x)).collect::<Vec<_>>(),
        ));
        h_raw = raw_wm.sequence_step(&tape, &raw_bound, h_raw, a, s_raw);
        h_priv = priv_wm.sequence_step(&tape, &priv_bound, h_priv, a, s_priv);

        let prior_raw = raw_wm.prior_logits(&tape, &raw_bound, h_raw);
        s_raw = categorical_sample_st(&tape, prior_raw, cfg.classes, cfg.unimix, sample_rng)?;
        s_priv = match mode {
            SamplingMode::Shared => s_raw,
            SamplingMode::Independent => {
                let prior_priv = priv_wm.prior_logits(&tape, &priv_bound, h_priv);
                categorical_sample_st(&tape, prior_priv, cfg.classes, cfg.unimix, sample_rng)?
            }
        };

        let (r, c) = if head_guidance {
            let r = priv_wm.reward_mean(&tape, &priv_bound, h_priv, s_priv)?;
            let c = priv_wm.continue_prob(&tape, &priv_bound, h_priv, s_priv)?;
            (r, c)
        } else {
            let r = raw_wm.reward_mean(&tape, &raw_bound, h_raw, s_raw)?;
            let c = raw_wm.continue_prob(&tape, &raw_bound, h_raw, s_raw)?;
            (r, c)
        };

        let hv_raw = tape.value(h_raw);
        let hv_priv = tape.value(h_priv);
        let mse = hv_raw
            .data()
            .iter()
            .zip(hv_priv.data().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / hv_raw.len() as f64;
        divergence.push(mse);

        latents.push(concat_rows(&hv_raw, &tape.value(s_raw)));
        actions.push(act);
        rewards.push(tape.value(r).data().to_vec());
        continues.push(tape.value(c).data().to_vec());
    }

    let traj = complete_returns(
        raw_wm, policy, latents, actions, rewards, continues, n, horizon, gamma, lambda,
        index_shift,
    )?;
    Ok((traj, divergence))
}

fn concat_rows(h: &Array, s: &Array) -> Array {
    let n = h.rows();
    let hc = h.cols();
    let sc = s.cols();
    let mut data = Vec::with_capacity(n * (hc + sc));
    for r in 0..n {
        data.extend_from_slice(&h.data()[r * hc..(r + 1) * hc]);
        data.extend_from_slice(&s.data()[r * sc..(r + 1) * sc]);
    }
    Array::from_vec(vec![n, hc + sc], data).unwrap()
}
