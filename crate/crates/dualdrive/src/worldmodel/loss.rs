//! World-model training loss: prediction terms over the active heads plus
//! free-bits-floored dynamics and representation KL terms with one-sided
//! stop-gradients.

use crate::numcore::dist::{categorical_sample_st, kl_categorical_grouped, mixed_probs};
use crate::numcore::{Array, NumError, Rng, Tape, Var};

use super::batch::SequenceBatch;
use super::model::{action_rows, BoundWm, WorldModel};

/// How the stochastic state is realized during an unroll: one-hot samples
/// with straight-through gradients for training, or the expected value
/// (class probabilities) for finite-difference gradient oracles, which can
/// only meaningfully probe the differentiable path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSampling {
    Sample,
    Expected,
}

#[derive(Clone, Copy, Debug)]
pub struct WmLossWeights {
    pub pred: f64,
    pub dynamics: f64,
    pub representation: f64,
}

impl Default for WmLossWeights {
    fn default() -> Self {
        Self {
            pred: 1.0,
            dynamics: 0.5,
            representation: 0.1,
        }
    }
}

/// Loss output: differentiable total plus per-term scalar values.
pub struct WmLoss {
    pub total: Var,
    pub decoder_nll: f64,
    pub reward_nll: f64,
    pub continue_nll: f64,
    pub dynamics: f64,
    pub representation: f64,
}

/// Posterior-filtered latents per timestep, detached for reuse as
/// imagination start states.
pub struct PosteriorLatents {
    pub h: Vec<Array>,
    pub s: Vec<Array>,
}

/// Free-bits clamp: per-sample KL summed over groups, floored at one nat,
/// then averaged over the batch.
fn kl_term(
    tape: &Tape,
    q_logits: Var,
    p_logits: Var,
    classes: usize,
    unimix: f64,
) -> Result<Var, NumError> {
    let grouped = kl_categorical_grouped(tape, q_logits, p_logits, classes, unimix)?;
    let per_sample = tape.sum_rows(grouped);
    let floored = tape.clamp_min(per_sample, 1.0);
    Ok(tape.mean(floored))
}

/// Teacher-forced unroll of one stream with its own posterior samples.
/// Decoder target is always the privileged BEV mask; reward and continue
/// terms apply only where those heads exist.
pub fn wm_loss(
    tape: &Tape,
    wm: &WorldModel,
    bound: &BoundWm,
    batch: &SequenceBatch,
    weights: &WmLossWeights,
    sampling: LatentSampling,
    rng: &mut Rng,
) -> Result<(WmLoss, PosteriorLatents), NumError> {
    if batch.seq_len < 2 {
        return Err(NumError::InvalidArgument(format!(
            "sequence length {} below minimum 2",
            batch.seq_len
        )));
    }
    let cfg = &wm.cfg;
    let b = batch.batch;
    let t_len = batch.seq_len;
    let unimix = cfg.unimix;

    let mut h = tape.constant(Array::zeros(vec![b, cfg.det_dim]));
    let mut s_prev = tape.constant(Array::zeros(vec![b, cfg.stoch_dim()]));

    let mut dec_sum: Option<Var> = None;
    let mut rew_sum: Option<Var> = None;
    let mut cont_sum: Option<Var> = None;
    let mut dyn_sum: Option<Var> = None;
    let mut rep_sum: Option<Var> = None;
    let mut latents = PosteriorLatents {
        h: Vec::with_capacity(t_len),
        s: Vec::with_capacity(t_len),
    };

    let add_to = |slot: &mut Option<Var>, v: Var| {
        *slot = Some(match slot.take() {
            Some(acc) => tape.add(acc, v),
            None => v,
        });
    };

    for t in 0..t_len {
        let action = tape.constant(action_rows(&batch.prev_actions(t)));
        h = wm.sequence_step(tape, bound, h, action, s_prev);

        let (patches, egos) = match wm.stream {
            super::model::Stream::Privileged => wm.patch_rows_priv(&batch.priv_at(t)),
            super::model::Stream::Raw => {
                let raw = batch.raw_at(t).ok_or_else(|| {
                    NumError::InvalidArgument("raw stream needs paired raw observations".into())
                })?;
                wm.patch_rows_raw(&raw)
            }
        };
        let e = wm.encode(tape, bound, tape.constant(patches), tape.constant(egos));
        let q_logits = wm.posterior_logits(tape, bound, h, e);
        let s = match sampling {
            LatentSampling::Sample => {
                categorical_sample_st(tape, q_logits, cfg.classes, unimix, rng)?
            }
            LatentSampling::Expected => mixed_probs(tape, q_logits, cfg.classes, unimix),
        };
        let p_logits = wm.prior_logits(tape, bound, h);

        // Prediction: decoder against the privileged mask in patch layout.
        let dec_logits = wm.decode_patches(tape, bound, h, s);
        let target = wm.mask_to_patches(&batch.priv_at(t));
        let nll = tape.bern_nll_logits(dec_logits, &target);
        let per_cell = tape.sum_rows(nll);
        let per_sample = tape.sum_rows(tape.reshape(per_cell, vec![b, cfg.grid_cells()]));
        add_to(&mut dec_sum, tape.mean(per_sample));

        if bound.reward.is_some() {
            let pred = wm.reward_mean(tape, bound, h, s)?;
            let target = tape.constant(
                Array::from_vec(vec![b, 1], batch.rewards_at(t)).expect("reward rows"),
            );
            let diff = tape.sub(pred, target);
            let sq = tape.mul(diff, diff);
            add_to(&mut rew_sum, tape.mul_scalar(tape.mean(sq), 0.5));
        }
        if bound.cont.is_some() {
            let logit = wm.continue_logit(tape, bound, h, s)?;
            let target =
                Array::from_vec(vec![b, 1], batch.continues_at(t)).expect("continue rows");
            let nll = tape.bern_nll_logits(logit, &target);
            add_to(&mut cont_sum, tape.mean(nll));
        }

        let q_stopped = tape.stop_grad(q_logits);
        let p_stopped = tape.stop_grad(p_logits);
        add_to(
            &mut dyn_sum,
            kl_term(tape, q_stopped, p_logits, cfg.classes, unimix)?,
        );
        add_to(
            &mut rep_sum,
            kl_term(tape, q_logits, p_stopped, cfg.classes, unimix)?,
        );

        latents.h.push(tape.value(h));
        latents.s.push(tape.value(s));
        s_prev = s;
    }

    let scale = 1.0 / t_len as f64;
    let mean_t = |v: Option<Var>| v.map(|x| tape.mul_scalar(x, scale));
    let dec = mean_t(dec_sum).expect("decoder term always present");
    let rew = mean_t(rew_sum);
    let cont = mean_t(cont_sum);
    let dynamics = mean_t(dyn_sum).expect("dynamics term");
    let representation = mean_t(rep_sum).expect("representation term");

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

    Ok((
        WmLoss {
            total,
            decoder_nll: tape.item(dec),
            reward_nll: rew.map(|v| tape.item(v)).unwrap_or(0.0),
            continue_nll: cont.map(|v| tape.item(v)).unwrap_or(0.0),
            dynamics: tape.item(dynamics),
            representation: tape.item(representation),
        },
        latents,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdrive::{Env, EnvConfig, Scenario};
    use crate::numcore::dist::kl_categorical;
    use crate::worldmodel::config::ModelConfig;
    use crate::worldmodel::model::{Stream, WorldModel};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            obs_size: 32,
            priv_channels: 8,
            grid_side: 8,
            feat: 4,
            det_dim: 12,
            groups: 3,
            classes: 4,
            hidden: 12,
            dec_feat: 4,
            unimix: 0.01,
        }
    }

    fn tiny_batch(b: usize, t: usize) -> SequenceBatch {
        let mut priv_obs = Vec::new();
        let mut raw_obs = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut continues = Vec::new();
        for seed in 0..b as u64 {
            let mut env = Env::reset(EnvConfig::default(), seed, Scenario::LeadVehicleBrake);
            let first = env.render_paired();
            priv_obs.push(first.privileged);
            raw_obs.push(first.raw);
            for step in 0..t {
                let a = (5 + step) % 39;
                let (out, obs) = env.step_paired(a).unwrap();
                if step + 1 < t {
                    priv_obs.push(obs.privileged);
                    raw_obs.push(obs.raw);
                }
                actions.push(a);
                rewards.push(out.reward);
                continues.push(out.continue_flag);
            }
        }
        SequenceBatch {
            batch: b,
            seq_len: t,
            priv_obs,
            raw_obs: Some(raw_obs),
            actions,
            first_prev_action: vec![None; b],
            rewards,
            continues,
        }
    }

    #[test]
    fn loss_runs_and_terms_are_finite() {
        let mut rng = Rng::new(0);
        let wm = WorldModel::new(tiny_cfg(), Stream::Privileged, false, &mut rng);
        let batch = tiny_batch(2, 4);
        let tape = Tape::new();
        let bound = wm.bind(&tape, true);
        let (loss, latents) =
            wm_loss(&tape, &wm, &bound, &batch, &WmLossWeights::default(), LatentSampling::Sample, &mut rng).unwrap();
        assert!(tape.item(loss.total).is_finite());
        assert!(loss.dynamics >= 1.0);
        assert!(loss.representation >= 1.0);
        assert_eq!(latents.h.len(), 4);
        let g = tape.backward(loss.total).unwrap();
        for v in bound.gru.vars() {
            assert!(g.wrt(*v).all_finite());
        }
    }

    #[test]
    fn short_sequence_rejected() {
        let mut rng = Rng::new(0);
        let wm = WorldModel::new(tiny_cfg(), Stream::Privileged, false, &mut rng);
        let batch = tiny_batch(1, 1);
        let tape = Tape::new();
        let bound = wm.bind(&tape, true);
        assert!(wm_loss(&tape, &wm, &bound, &batch, &WmLossWeights::default(), LatentSampling::Sample, &mut rng).is_err());
    }

    #[test]
    fn matched_logits_hit_free_bits_floor() {
        // KL = 0 clamps both KL terms to exactly 1.
        let tape = Tape::new();
        let q = tape.constant(Array::from_vec(vec![1, 6], vec![0.3; 6]).unwrap());
        let p = tape.constant(Array::from_vec(vec![1, 6], vec![0.3; 6]).unwrap());
        let term = kl_term(&tape, q, p, 3, 0.01).unwrap();
        assert_eq!(tape.item(term), 1.0);
    }

    #[test]
    fn perfect_decoder_gives_zero_prediction_term() {
        // Saturated logits matching a binary target give zero Bernoulli NLL.
        let tape = Tape::new();
        let target = Array::from_vec(vec![1, 4], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let logits = tape.constant(
            Array::from_vec(vec![1, 4], vec![80.0, -80.0, 80.0, 80.0]).unwrap(),
        );
        let nll = tape.bern_nll_logits(logits, &target);
        let total = tape.sum(nll);
        assert!(tape.item(total).abs() < 1e-12);
    }

    #[test]
    fn stop_gradient_placement_is_exact() {
        // dynamics term: no gradient into posterior params;
        // representation term: no gradient into prior params.
        let mut rng = Rng::new(4);
        let wm = WorldModel::new(tiny_cfg(), Stream::Privileged, false, &mut rng);
        let batch = tiny_batch(2, 3);

        for dynamics_only in [true, false] {
            let tape = Tape::new();
            let bound = wm.bind(&tape, true);
            let weights = if dynamics_only {
                WmLossWeights {
                    pred: 0.0,
                    dynamics: 1.0,
                    representation: 0.0,
                }
            } else {
                WmLossWeights {
                    pred: 0.0,
                    dynamics: 0.0,
                    representation: 1.0,
                }
            };
            let (loss, _) =
                wm_loss(&tape, &wm, &bound, &batch, &weights, LatentSampling::Sample, &mut rng).unwrap();
            let g = tape.backward(loss.total).unwrap();
            if dynamics_only {
                for v in bound.posterior.vars() {
                    assert!(g.is_zero(*v), "dynamics loss leaked into posterior");
                }
            } else {
                for v in bound.prior.vars() {
                    assert!(g.is_zero(*v), "representation loss leaked into prior");
                }
            }
        }
    }

    #[test]
    fn posterior_prior_kl_nonnegative_for_random_inputs() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(11);
        let wm = WorldModel::new(cfg.clone(), Stream::Privileged, false, &mut rng);
        let tape = Tape::new();
        let bound = wm.bind(&tape, false);
        for _ in 0..50 {
            let h_data: Vec<f64> = (0..cfg.det_dim).map(|_| rng.normal()).collect();
            let e_data: Vec<f64> = (0..cfg.encoder_dim()).map(|_| rng.normal()).collect();
            let h = tape.constant(Array::from_vec(vec![1, cfg.det_dim], h_data).unwrap());
            let e = tape.constant(Array::from_vec(vec![1, cfg.encoder_dim()], e_data).unwrap());
            let q = wm.posterior_logits(&tape, &bound, h, e);
            let p = wm.prior_logits(&tape, &bound, h);
            assert!(tape.value(q).all_finite());
            assert!(tape.value(p).all_finite());
            let kl = kl_categorical(&tape, q, p, cfg.classes, cfg.unimix).unwrap();
            assert!(tape.item(kl) >= 0.0);
        }
    }
}
