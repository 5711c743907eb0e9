//! Actor, critic, and distillation losses over imagined trajectories.

use crate::microdrive::NUM_ACTIONS;
use crate::numcore::dist::{entropy_rows, log_softmax_rows};
use crate::numcore::{Array, NumError, Tape, Var};

/// Reinforce-style actor loss with stopped, scale-normalized advantages:
/// mean of `-A_t log pi(a_t) - eta H[pi]`. Advantages arrive pre-divided
/// by `max(1, S)` and carry no gradient.
pub fn actor_loss(
    tape: &Tape,
    logits: Var,
    taken: &[usize],
    advantages: &[f64],
    eta: f64,
) -> Result<Var, NumError> {
    let n = tape.rows(logits);
    if taken.len() != n || advantages.len() != n {
        return Err(NumError::InvalidArgument(format!(
            "actor_loss: rows {n}, taken {}, advantages {}",
            taken.len(),
            advantages.len()
        )));
    }
    let logp = log_softmax_rows(tape, logits, NUM_ACTIONS);
    let mut onehot = vec![0.0; n * NUM_ACTIONS];
    for (i, &a) in taken.iter().enumerate() {
        onehot[i * NUM_ACTIONS + a] = 1.0;
    }
    let onehot = tape.constant(Array::from_vec(vec![n, NUM_ACTIONS], onehot).unwrap());
    let logp_taken = tape.sum_rows(tape.mul(logp, onehot));
    let adv = tape.constant(Array::from_vec(vec![n, 1], advantages.to_vec()).unwrap());
    let weighted = tape.mul(logp_taken, adv);
    let pg = tape.neg(tape.mean(weighted));
    let entropy = tape.mean(entropy_rows(tape, logits, NUM_ACTIONS));
    let bonus = tape.mul_scalar(entropy, eta);
    Ok(tape.sub(pg, bonus))
}

/// Fixed-variance Gaussian critic likelihood: mean of `0.5 (R - v)^2` with
/// the return targets stopped.
pub fn critic_loss(tape: &Tape, values: Var, targets: Var) -> Var {
    let stopped = tape.stop_grad(targets);
    let diff = tape.sub(stopped, values);
    let sq = tape.mul(diff, diff);
    tape.mul_scalar(tape.mean(sq), 0.5)
}

/// `KL(softmax(teacher) || softmax(student))`, teacher side stopped,
/// averaged over rows.
pub fn distill_loss(tape: &Tape, teacher_logits: Var, student_logits: Var) -> Result<Var, NumError> {
    if tape.shape(teacher_logits) != tape.shape(student_logits) {
        return Err(NumError::ShapeMismatch {
            expected: tape.shape(teacher_logits),
            got: tape.shape(student_logits),
        });
    }
    let rows = tape.rows(teacher_logits);
    let teacher = tape.stop_grad(teacher_logits);
    let t_logp = log_softmax_rows(tape, teacher, NUM_ACTIONS);
    let s_logp = log_softmax_rows(tape, student_logits, NUM_ACTIONS);
    let t_probs = tape.exp(t_logp);
    let diff = tape.sub(t_logp, s_logp);
    let kl = tape.sum_rows(tape.mul(t_probs, diff));
    Ok(tape.mul_scalar(tape.sum(kl), 1.0 / rows as f64))
}

/// Divisor for advantage normalization.
pub fn advantage_divisor(scale: f64) -> f64 {
    scale.max(1.0)
}
