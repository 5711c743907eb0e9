//! Aligned B x T training slices drawn from replay.

use crate::microdrive::{PrivilegedObs, RawObs};

/// Row-major `[batch][time]` storage; index `b * seq_len + t`.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub batch: usize,
    pub seq_len: usize,
    pub priv_obs: Vec<PrivilegedObs>,
    pub raw_obs: Option<Vec<RawObs>>,
    pub actions: Vec<usize>,
    /// Action preceding each window's first step; None at episode starts.
    pub first_prev_action: Vec<Option<usize>>,
    pub rewards: Vec<f64>,
    pub continues: Vec<f64>,
}

impl SequenceBatch {
    pub fn priv_at(&self, t: usize) -> Vec<&PrivilegedObs> {
        (0..self.batch)
            .map(|b| &self.priv_obs[b * self.seq_len + t])
            .collect()
    }

    pub fn raw_at(&self, t: usize) -> Option<Vec<&RawObs>> {
        self.raw_obs
            .as_ref()
            .map(|raw| (0..self.batch).map(|b| &raw[b * self.seq_len + t]).collect())
    }

    /// Previous action per batch row when standing at step `t`.
    pub fn prev_actions(&self, t: usize) -> Vec<Option<usize>> {
        (0..self.batch)
            .map(|b| {
                if t == 0 {
                    self.first_prev_action[b]
                } else {
                    Some(self.actions[b * self.seq_len + t - 1])
                }
            })
            .collect()
    }

    pub fn rewards_at(&self, t: usize) -> Vec<f64> {
        (0..self.batch)
            .map(|b| self.rewards[b * self.seq_len + t])
            .collect()
    }

    pub fn continues_at(&self, t: usize) -> Vec<f64> {
        (0..self.batch)
            .map(|b| self.continues[b * self.seq_len + t])
            .collect()
    }

    pub fn actions_at(&self, t: usize) -> Vec<usize> {
        (0..self.batch)
            .map(|b| self.actions[b * self.seq_len + t])
            .collect()
    }
}
