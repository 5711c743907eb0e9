//! Actor and critic networks over RSSM latents.

use crate::microdrive::NUM_ACTIONS;
use crate::numcore::{Array, BoundParams, ParameterSet, Rng, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Actor, critic, and the percentile-EMA return scale `S`.
#[derive(Clone, Debug)]
pub struct PolicyParams {
    pub actor: ParameterSet,
    pub critic: ParameterSet,
    pub return_scale: f64,
}

pub struct BoundPolicy {
    pub actor: BoundParams,
    pub critic: BoundParams,
}

impl PolicyParams {
    pub fn new(latent_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut actor = ParameterSet::new();
        actor.insert_linear("l0", latent_dim, hidden, rng);
        actor.insert_linear("l1", hidden, NUM_ACTIONS, rng);
        let mut critic = ParameterSet::new();
        critic.insert_linear("l0", latent_dim, hidden, rng);
        critic.insert_linear("l1", hidden, 1, rng);
        Self {
            actor,
            critic,
            return_scale: 0.0,
        }
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundPolicy {
        BoundPolicy {
            actor: self.actor.bind(tape, trainable),
            critic: self.critic.bind(tape, trainable),
        }
    }

    pub fn actor_logits(&self, tape: &Tape, bound: &BoundPolicy, latents: Var) -> Var {
        let h = tape.silu(tape.linear(
            latents,
            bound.actor.var("l0.w"),
            bound.actor.var("l0.b"),
        ));
        tape.linear(h, bound.actor.var("l1.w"), bound.actor.var("l1.b"))
    }

    pub fn critic_values(&self, tape: &Tape, bound: &BoundPolicy, latents: Var) -> Var {
        let h = tape.silu(tape.linear(
            latents,
            bound.critic.var("l0.w"),
            bound.critic.var("l0.b"),
        ));
        tape.linear(h, bound.critic.var("l1.w"), bound.critic.var("l1.b"))
    }

    /// Evaluate critic values on detached latent rows.
    pub fn values_plain(&self, latents: &Array) -> Vec<f64> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let x = tape.constant(latents.clone());
        let v = self.critic_values(&tape, &bound, x);
        tape.value(v).data().to_vec()
    }

    /// Action logits on detached latent rows.
    pub fn logits_plain(&self, latents: &Array) -> Array {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let x = tape.constant(latents.clone());
        let l = self.actor_logits(&tape, &bound, x);
        tape.value(l)
    }

    /// Pick one action per latent row. Sampling consumes one rng draw per
    /// row; greedy takes the argmax and is rng-free.
    pub fn act_rows(&self, latents: &Array, mode: ActMode, rng: &mut Rng) -> Vec<usize> {
        let logits = self.logits_plain(latents);
        let rows = logits.rows();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &logits.data()[r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS];
            let idx = match mode {
                ActMode::Greedy => {
                    let mut best = 0;
                    for (i, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = i;
                        }
                    }
                    best
                }
                ActMode::Sample => {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut probs: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                    let sum: f64 = probs.iter().sum();
                    for p in probs.iter_mut() {
                        *p /= sum;
                    }
                    rng.categorical(&probs)
                }
            };
            out.push(idx);
        }
        out
    }

    pub fn act(&self, latent: &Array, mode: ActMode, rng: &mut Rng) -> usize {
        self.act_rows(latent, mode, rng)[0]
    }
}
