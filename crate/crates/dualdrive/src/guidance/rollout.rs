//! The rollout-guidance alignment loss.
//!
//! Per timestep: a per-grid-cell MSE between encoder states, a KL between
//! the two stochastic-state distributions (privileged side as target), and
//! an MSE between deterministic states — summed over the window and
//! weighted by beta_e, beta_s, beta_h.

use crate::numcore::dist::kl_categorical_grouped;
use crate::numcore::{NumError, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GuidanceWeights {
    pub beta_e: f64,
    pub beta_s: f64,
    pub beta_h: f64,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self {
            beta_e: 10.0,
            beta_s: 10.0,
            beta_h: 5.0,
        }
    }
}

/// Aligned quantities for one timestep of a paired rollout.
pub struct PairedStep {
    pub e_priv: Var,
    pub e_raw: Var,
    pub h_priv: Var,
    pub h_raw: Var,
    pub s_logits_priv: Var,
    pub s_logits_raw: Var,
    pub shared_sample: Var,
}

pub struct PairedRollout {
    pub steps: Vec<PairedStep>,
    pub grid_cells: usize,
    pub feat: usize,
    pub classes: usize,
    pub unimix: f64,
}

/// Term-level values for the metrics stream.
#[derive(Clone, Copy, Debug, Default)]
pub struct GuidanceTerms {
    pub e_mse: f64,
    pub s_kl: f64,
    pub h_mse: f64,
}

/// Sum over cells of the per-cell feature MSE, batch-averaged: `[B, G*F]`.
fn grid_mse(tape: &Tape, a: Var, b: Var, cells: usize, feat: usize) -> Var {
    let rows = tape.rows(a);
    let diff = tape.sub(a, b);
    let sq = tape.mul(diff, diff);
    let per_cell = tape.sum_rows(tape.reshape(sq, vec![rows * cells, feat]));
    let per_cell = tape.mul_scalar(per_cell, 1.0 / feat as f64);
    let per_sample = tape.sum_rows(tape.reshape(per_cell, vec![rows, cells]));
    tape.mean(per_sample)
}

/// Eq.-style alignment loss over a paired rollout, with per-term breakdown.
/// The privileged side must already be gradient-free (frozen model).
pub fn rollout_guidance_loss(
    tape: &Tape,
    rollout: &PairedRollout,
    weights: &GuidanceWeights,
    kl_reverse: bool,
) -> Result<(Var, GuidanceTerms), NumError> {
    if rollout.steps.is_empty() {
        return Err(NumError::EmptyInput("rollout_guidance_loss"));
    }
    let cells = rollout.grid_cells;
    let feat = rollout.feat;
    for step in &rollout.steps {
        if tape.cols(step.e_priv) != cells * feat || tape.cols(step.e_raw) != cells * feat {
            return Err(NumError::ShapeMismatch {
                expected: vec![cells * feat],
                got: vec![tape.cols(step.e_raw)],
            });
        }
    }

    let mut e_sum: Option<Var> = None;
    let mut s_sum: Option<Var> = None;
    let mut h_sum: Option<Var> = None;
    let add = |slot: &mut Option<Var>, v: Var| {
        *slot = Some(match slot.take() {
            Some(acc) => tape.add(acc, v),
            None => v,
        });
    };

    for step in &rollout.steps {
        add(&mut e_sum, grid_mse(tape, step.e_priv, step.e_raw, cells, feat));

        let (q, p) = if kl_reverse {
            (step.s_logits_raw, step.s_logits_priv)
        } else {
            (step.s_logits_priv, step.s_logits_raw)
        };
        let grouped = kl_categorical_grouped(tape, q, p, rollout.classes, rollout.unimix)?;
        add(&mut s_sum, tape.mean(tape.sum_rows(grouped)));

        let hd = tape.cols(step.h_priv);
        let diff = tape.sub(step.h_priv, step.h_raw);
        let sq = tape.mul(diff, diff);
        let per_sample = tape.mul_scalar(tape.sum_rows(sq), 1.0 / hd as f64);
        add(&mut h_sum, tape.mean(per_sample));
    }

    let e_term = e_sum.unwrap();
    let s_term = s_sum.unwrap();
    let h_term = h_sum.unwrap();
    let terms = GuidanceTerms {
        e_mse: tape.item(e_term),
        s_kl: tape.item(s_term),
        h_mse: tape.item(h_term),
    };
    let mut total = tape.mul_scalar(e_term, weights.beta_e);
    total = tape.add(total, tape.mul_scalar(s_term, weights.beta_s));
    total = tape.add(total, tape.mul_scalar(h_term, weights.beta_h));
    Ok((total, terms))
}
