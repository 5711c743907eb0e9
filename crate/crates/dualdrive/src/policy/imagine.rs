//! Latent imagination: prior-driven rollouts under the current policy, with
//! rewards and continue flags from the owning model's heads, completed into
//! lambda-return targets.

use crate::numcore::dist::categorical_sample_st;
use crate::numcore::{Array, NumError, Rng, Tape};
use crate::worldmodel::WorldModel;

use super::net::{ActMode, PolicyParams};
use super::returns::lambda_returns;

/// Horizon-H rollout: `latents[t]` for t = 0..=H, actions chosen at each
/// state, predicted rewards/continues for each transition, critic values,
/// and lambda returns (`returns[H] == values[H]` by construction).
pub struct ImaginedTrajectory {
    pub starts: usize,
    pub horizon: usize,
    pub latents: Vec<Array>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub continues: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

impl ImaginedTrajectory {
    /// Per-state advantage targets `(R_t - v_t) / max(1, S)` flattened
    /// as t-major rows, excluding the terminal bootstrap state.
    pub fn advantages(&self, scale: f64) -> Vec<f64> {
        let divisor = scale.max(1.0);
        let mut out = Vec::with_capacity(self.horizon * self.starts);
        for t in 0..self.horizon {
            for n in 0..self.starts {
                out.push((self.returns[t][n] - self.values[t][n]) / divisor);
            }
        }
        out
    }

    /// Latent rows for states 0..H stacked t-major, matching `advantages`.
    pub fn decision_latents(&self) -> Array {
        let cols = self.latents[0].cols();
        let mut data = Vec::with_capacity(self.horizon * self.starts * cols);
        for t in 0..self.horizon {
            data.extend_from_slice(self.latents[t].data());
        }
        Array::from_vec(vec![self.horizon * self.starts, cols], data).unwrap()
    }

    pub fn taken_actions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.horizon * self.starts);
        for t in 0..self.horizon {
            out.extend_from_slice(&self.actions[t]);
        }
        out
    }

    pub fn return_targets(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.horizon * self.starts);
        for t in 0..self.horizon {
            out.extend_from_slice(&self.returns[t]);
        }
        out
    }

    pub fn flat_returns(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for row in &self.returns {
            out.extend_from_slice(row);
        }
        out
    }

    pub fn mean_return(&self) -> f64 {
        let flat = self.flat_returns();
        flat.iter().sum::<f64>() / flat.len() as f64
    }
}

fn concat_latent(h: &Array, s: &Array) -> Array {
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

/// Single-stream imagination from posterior start latents. All forwards are
/// detached; policy gradients are recomputed later on the stored latents.
#[allow(clippy::too_many_arguments)]
pub fn imagine(
    wm: &WorldModel,
    policy: &PolicyParams,
    start_h: Array,
    start_s: Array,
    horizon: usize,
    gamma: f64,
    lambda: f64,
    index_shift: bool,
    rng: &mut Rng,
) -> Result<ImaginedTrajectory, NumError> {
    let n = start_h.rows();
    let tape = Tape::new();
    let bound = wm.bind(&tape, false);

    let mut h = tape.constant(start_h);
    let mut s = tape.constant(start_s);

    let mut latents = vec![concat_latent(&tape.value(h), &tape.value(s))];
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut continues = Vec::with_capacity(horizon);

    for _ in 0..horizon {
        let latent_rows = latents.last().unwrap();
        let act = policy.act_rows(latent_rows, ActMode::Sample, rng);
        let action_rows = crate::worldmodel::action_rows(
            &act.iter().map(|&a| Some(a)).collect::<Vec<_>>(),
        );
        let a = tape.constant(action_rows);
        h = wm.sequence_step(&tape, &bound, h, a, s);
        let prior = wm.prior_logits(&tape, &bound, h);
        s = categorical_sample_st(&tape, prior, wm.cfg.classes, wm.cfg.unimix, rng)?;

        let reward = wm.reward_mean(&tape, &bound, h, s)?;
        let cont = wm.continue_prob(&tape, &bound, h, s)?;

        latents.push(concat_latent(&tape.value(h), &tape.value(s)));
        actions.push(act);
        rewards.push(tape.value(reward).data().to_vec());
        continues.push(tape.value(cont).data().to_vec());
    }

    complete_returns(
        wm, policy, latents, actions, rewards, continues, n, horizon, gamma, lambda, index_shift,
    )
}

/// Shared tail: critic evaluation and lambda returns per rollout column.
#[allow(clippy::too_many_arguments)]
pub fn complete_returns(
    _wm: &WorldModel,
    policy: &PolicyParams,
    latents: Vec<Array>,
    actions: Vec<Vec<usize>>,
    rewards: Vec<Vec<f64>>,
    continues: Vec<Vec<f64>>,
    n: usize,
    horizon: usize,
    gamma: f64,
    lambda: f64,
    index_shift: bool,
) -> Result<ImaginedTrajectory, NumError> {
    let values: Vec<Vec<f64>> = latents.iter().map(|l| policy.values_plain(l)).collect();

    let mut returns = vec![vec![0.0; n]; horizon + 1];
    for col in 0..n {
        let r: Vec<f64> = (0..horizon).map(|t| rewards[t][col]).collect();
        let c: Vec<f64> = (0..horizon).map(|t| continues[t][col]).collect();
        let v: Vec<f64> = (0..=horizon).map(|t| values[t][col]).collect();
        let col_returns = lambda_returns(&r, &c, &v, gamma, lambda, index_shift)?;
        for (t, val) in col_returns.into_iter().enumerate() {
            returns[t][col] = val;
        }
    }

    Ok(ImaginedTrajectory {
        starts: n,
        horizon,
        latents,
        actions,
        rewards,
        continues,
        values,
        returns,
    })
}
