//! Categorical distribution utilities over grouped logits.
//!
//! Stochastic states are K independent categorical groups of L classes,
//! carried as [rows, K*L] arrays. Probabilities mix a uniform floor:
//! probs = (1 - unimix) * softmax(logits) + unimix / L.

use super::array::NumError;
use super::rng::Rng;
use super::tape::{Tape, Var};

// Keeps q*ln(q) finite when a probability underflows to exactly zero.
const LOG_EPS: f64 = 1e-30;

/// Unimix-adjusted class probabilities, shape preserved.
pub fn mixed_probs(tape: &Tape, logits: Var, classes: usize, unimix: f64) -> Var {
    let shape = tape.shape(logits);
    let n = tape.value(logits).len();
    let flat = tape.reshape(logits, vec![n / classes, classes]);
    let sm = tape.softmax_rows(flat, classes);
    let mixed = if unimix > 0.0 {
        let scaled = tape.mul_scalar(sm, 1.0 - unimix);
        tape.add_scalar(scaled, unimix / classes as f64)
    } else {
        sm
    };
    tape.reshape(mixed, shape)
}

/// One-hot sample per group with straight-through gradients through the
/// mixed probabilities. Errors on non-finite logits.
pub fn categorical_sample_st(
    tape: &Tape,
    logits: Var,
    classes: usize,
    unimix: f64,
    rng: &mut Rng,
) -> Result<Var, NumError> {
    if classes < 2 {
        return Err(NumError::InvalidArgument(
            "categorical_sample_st: need at least 2 classes".into(),
        ));
    }
    if !(0.0..1.0).contains(&unimix) {
        return Err(NumError::InvalidArgument(format!(
            "unimix {unimix} outside [0,1)"
        )));
    }
    if !tape.value(logits).all_finite() {
        return Err(NumError::NonFinite("categorical_sample_st logits"));
    }
    let shape = tape.shape(logits);
    let probs = mixed_probs(tape, logits, classes, unimix);
    let n = tape.value(probs).len();
    let flat = tape.reshape(probs, vec![n / classes, classes]);
    let sample = tape.one_hot_st_rows(flat, rng);
    Ok(tape.reshape(sample, shape))
}

/// Per-group KL(q || p) = sum_l q_l (ln q_l - ln p_l) with unimix-adjusted
/// probabilities; output shape [rows, groups].
pub fn kl_categorical_grouped(
    tape: &Tape,
    q_logits: Var,
    p_logits: Var,
    classes: usize,
    unimix: f64,
) -> Result<Var, NumError> {
    let q_shape = tape.shape(q_logits);
    if q_shape != tape.shape(p_logits) {
        return Err(NumError::ShapeMismatch {
            expected: q_shape,
            got: tape.shape(p_logits),
        });
    }
    let n = tape.value(q_logits).len();
    let groups_total = n / classes;
    let q = mixed_probs(tape, q_logits, classes, unimix);
    let p = mixed_probs(tape, p_logits, classes, unimix);
    let qf = tape.reshape(q, vec![groups_total, classes]);
    let pf = tape.reshape(p, vec![groups_total, classes]);
    let ln_q = tape.ln(tape.add_scalar(qf, LOG_EPS));
    let ln_p = tape.ln(tape.add_scalar(pf, LOG_EPS));
    let diff = tape.sub(ln_q, ln_p);
    let terms = tape.mul(qf, diff);
    let per_group = tape.sum_rows(terms);
    let rows = tape.rows(q_logits);
    Ok(tape.reshape(per_group, vec![rows, groups_total / rows]))
}

/// KL(q || p) summed over all groups, as a scalar.
pub fn kl_categorical(
    tape: &Tape,
    q_logits: Var,
    p_logits: Var,
    classes: usize,
    unimix: f64,
) -> Result<Var, NumError> {
    let grouped = kl_categorical_grouped(tape, q_logits, p_logits, classes, unimix)?;
    Ok(tape.sum(grouped))
}

/// Row-wise log-softmax composed from tape primitives.
pub fn log_softmax_rows(tape: &Tape, logits: Var, width: usize) -> Var {
    let p = tape.softmax_rows(logits, width);
    tape.ln(tape.add_scalar(p, LOG_EPS))
}

/// Row-wise entropy of softmax(logits), output [rows, 1].
pub fn entropy_rows(tape: &Tape, logits: Var, width: usize) -> Var {
    let p = tape.softmax_rows(logits, width);
    let lp = tape.ln(tape.add_scalar(p, LOG_EPS));
    let neg = tape.neg(tape.mul(p, lp));
    tape.sum_rows(neg)
}
