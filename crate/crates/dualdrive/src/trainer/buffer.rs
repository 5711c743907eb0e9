//! Episode storage and sequence sampling.
//!
//! The simulator is a deterministic function of (seed, scenario, actions),
//! so episodes are stored as replay recipes and observations are
//! re-rendered on demand. That keeps the buffer and checkpoints small and
//! makes resume exactly reproducible.

use std::collections::VecDeque;

use crate::microdrive::world::InfractionCounts;
use crate::microdrive::{Env, EnvConfig, PrivilegedObs, RawObs, Scenario};
use crate::numcore::Rng;
use crate::worldmodel::SequenceBatch;

use super::TrainError;

#[derive(Clone, Debug)]
pub struct EpisodeRecipe {
    pub id: u64,
    pub scenario: Scenario,
    pub seed: u64,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub continues: Vec<f64>,
    pub progress: f64,
    pub infractions: InfractionCounts,
    pub success: bool,
}

impl EpisodeRecipe {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

pub struct ReplayBuffer {
    pub env_cfg: EnvConfig,
    pub paired: bool,
    capacity_steps: usize,
    episodes: VecDeque<EpisodeRecipe>,
    total_steps: usize,
    next_id: u64,
}

impl ReplayBuffer {
    pub fn new(env_cfg: EnvConfig, paired: bool, capacity_steps: usize) -> Self {
        Self {
            env_cfg,
            paired,
            capacity_steps,
            episodes: VecDeque::new(),
            total_steps: 0,
            next_id: 0,
        }
    }

    pub fn push(&mut self, mut episode: EpisodeRecipe) -> u64 {
        let id = self.next_id;
        episode.id = id;
        self.next_id += 1;
        self.total_steps += episode.len();
        self.episodes.push_back(episode);
        while self.total_steps > self.capacity_steps && self.episodes.len() > 1 {
            if let Some(old) = self.episodes.pop_front() {
                self.total_steps -= old.len();
            }
        }
        id
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeRecipe> {
        self.episodes.iter()
    }

    pub fn restore(&mut self, episodes: Vec<EpisodeRecipe>, next_id: u64) {
        self.episodes = episodes.into();
        self.total_steps = self.episodes.iter().map(|e| e.len()).sum();
        self.next_id = next_id;
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Number of valid (episode, start) windows of length `t`.
    pub fn windows(&self, t: usize) -> usize {
        self.episodes
            .iter()
            .map(|e| e.len().saturating_sub(t - 1))
            .sum()
    }

    /// Uniform sample over valid windows; errors until warmup data exists.
    pub fn sample_sequences(
        &self,
        batch: usize,
        seq_len: usize,
        rng: &mut Rng,
    ) -> Result<SequenceBatch, TrainError> {
        let window_count = self.windows(seq_len);
        if window_count == 0 {
            return Err(TrainError::Warmup(seq_len));
        }
        let mut priv_obs = Vec::with_capacity(batch * seq_len);
        let mut raw_obs = self.paired.then(|| Vec::with_capacity(batch * seq_len));
        let mut actions = Vec::with_capacity(batch * seq_len);
        let mut first_prev_action = Vec::with_capacity(batch);
        let mut rewards = Vec::with_capacity(batch * seq_len);
        let mut continues = Vec::with_capacity(batch * seq_len);

        for _ in 0..batch {
            let mut index = rng.index(window_count);
            let mut chosen = None;
            for episode in &self.episodes {
                let w = episode.len().saturating_sub(seq_len - 1);
                if index < w {
                    chosen = Some((episode, index));
                    break;
                }
                index -= w;
            }
            let (episode, start) = chosen.expect("window index within count");
            let (pv, rw) = self.materialize_window(episode, start, seq_len);
            priv_obs.extend(pv);
            if let (Some(all), Some(rw)) = (raw_obs.as_mut(), rw) {
                all.extend(rw);
            }
            actions.extend_from_slice(&episode.actions[start..start + seq_len]);
            rewards.extend_from_slice(&episode.rewards[start..start + seq_len]);
            continues.extend_from_slice(&episode.continues[start..start + seq_len]);
            first_prev_action.push(if start > 0 {
                Some(episode.actions[start - 1])
            } else {
                None
            });
        }

        Ok(SequenceBatch {
            batch,
            seq_len,
            priv_obs,
            raw_obs,
            actions,
            first_prev_action,
            rewards,
            continues,
        })
    }

    /// Re-simulate one episode prefix and render the requested frames.
    fn materialize_window(
        &self,
        episode: &EpisodeRecipe,
        start: usize,
        seq_len: usize,
    ) -> (Vec<PrivilegedObs>, Option<Vec<RawObs>>) {
        let mut env = Env::reset(self.env_cfg.clone(), episode.seed, episode.scenario);
        let mut privs = Vec::with_capacity(seq_len);
        let mut raws = self.paired.then(|| Vec::with_capacity(seq_len));
        let end = start + seq_len;
        for i in 0..end {
            if i >= start {
                privs.push(env.render_privileged());
                if let Some(raws) = raws.as_mut() {
                    raws.push(env.render_raw());
                }
            }
            if i + 1 < end {
                env.step(episode.actions[i]).expect("recipe replay in bounds");
            }
        }
        (privs, raws)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdrive::world::{reset, step};
    use crate::microdrive::{action_decode, render::render_privileged};

    fn recipe(seed: u64, n: usize) -> EpisodeRecipe {
        let cfg = EnvConfig::default();
        let mut state = reset(&cfg, seed, Scenario::LeadVehicleBrake);
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut continues = Vec::new();
        let mut rng = Rng::new(seed ^ 0xFEED);
        for _ in 0..n {
            if state.terminated.is_some() {
                break;
            }
            let a = rng.index(39);
            let out = step(&cfg, &mut state, &action_decode(a).unwrap()).unwrap();
            actions.push(a);
            rewards.push(out.reward);
            continues.push(out.continue_flag);
        }
        EpisodeRecipe {
            id: 0,
            scenario: Scenario::LeadVehicleBrake,
            seed,
            actions,
            rewards,
            continues,
            progress: state.progress,
            infractions: state.infractions.clone(),
            success: state.success(),
        }
    }

    #[test]
    fn warmup_error_until_long_enough_episode() {
        let mut buffer = ReplayBuffer::new(EnvConfig::default(), false, 10_000);
        let mut rng = Rng::new(0);
        assert!(matches!(
            buffer.sample_sequences(1, 4, &mut rng),
            Err(TrainError::Warmup(4))
        ));
        buffer.push(recipe(1, 3));
        assert!(buffer.sample_sequences(1, 4, &mut rng).is_err());
        buffer.push(recipe(2, 20));
        assert!(buffer.sample_sequences(2, 4, &mut rng).is_ok());
    }

    #[test]
    fn single_window_is_the_only_choice() {
        let mut buffer = ReplayBuffer::new(EnvConfig::default(), false, 10_000);
        let ep = recipe(3, 10);
        let n = ep.len();
        let first_action = ep.actions[0];
        buffer.push(ep);
        let mut rng = Rng::new(5);
        let batch = buffer.sample_sequences(1, n, &mut rng).unwrap();
        assert_eq!(batch.actions[0], first_action);
        assert_eq!(batch.first_prev_action[0], None);
        assert_eq!(buffer.windows(n), 1);
    }

    #[test]
    fn materialized_window_matches_live_episode() {
        let cfg = EnvConfig::default();
        let ep = recipe(7, 30);
        // Live pass: replay whole episode, record obs at each step.
        let mut state = reset(&cfg, ep.seed, ep.scenario);
        let mut live = vec![render_privileged(&cfg, &state)];
        for &a in &ep.actions[..ep.len() - 1] {
            step(&cfg, &mut state, &action_decode(a).unwrap()).unwrap();
            live.push(render_privileged(&cfg, &state));
        }

        let mut buffer = ReplayBuffer::new(cfg, true, 10_000);
        let n = ep.len();
        buffer.push(ep);
        let mut rng = Rng::new(2);
        let t = 6;
        let batch = buffer.sample_sequences(3, t, &mut rng).unwrap();
        // Every materialized window frame equals the live render at the
        // same absolute episode index.
        for b in 0..batch.batch {
            let w0 = &batch.priv_obs[b * t];
            let abs = live
                .iter()
                .position(|o| o.mask == w0.mask && o.ego_vector == w0.ego_vector)
                .expect("window start must match some live frame");
            assert!(abs + t <= n);
            for i in 1..t {
                assert_eq!(batch.priv_obs[b * t + i].mask, live[abs + i].mask);
            }
        }
        assert!(batch.raw_obs.is_some());
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut buffer = ReplayBuffer::new(EnvConfig::default(), false, 45);
        buffer.push(recipe(1, 30));
        buffer.push(recipe(2, 30));
        assert_eq!(buffer.episode_count(), 1);
        assert!(buffer.total_steps() <= 45);
    }

    #[test]
    fn window_start_distribution_is_uniform() {
        // One 24-step episode, T = 16: 9 valid starts. Chi-squared over
        // 10^4 draws with 8 dof; 0.99 quantile = 20.09.
        let mut buffer = ReplayBuffer::new(EnvConfig::default(), false, 10_000);
        let ep = recipe(11, 24);
        assert!(ep.len() >= 24);
        let first_live = {
            let cfg = EnvConfig::default();
            let mut state = reset(&cfg, ep.seed, ep.scenario);
            let mut all = vec![render_privileged(&cfg, &state)];
            for &a in &ep.actions[..ep.len() - 1] {
                step(&cfg, &mut state, &action_decode(a).unwrap()).unwrap();
                all.push(render_privileged(&cfg, &state));
            }
            all
        };
        buffer.push(ep);
        let t = 16;
        let starts = 24 - t + 1;
        let mut counts = vec![0usize; starts];
        let mut rng = Rng::new(77);
        let draws = 10_000;
        for _ in 0..draws {
            let batch = buffer.sample_sequences(1, t, &mut rng).unwrap();
            let w0 = &batch.priv_obs[0];
            let abs = first_live
                .iter()
                .position(|o| o.mask == w0.mask && o.ego_vector == w0.ego_vector)
                .unwrap();
            counts[abs] += 1;
        }
        let expected = draws as f64 / starts as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 20.09, "chi2 {chi2} over {starts} bins: {counts:?}");
    }
}
