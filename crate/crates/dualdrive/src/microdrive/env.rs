//! Environment facade: owns the world state, hands out observations per
//! stream, and counts privileged renders so raw-only evaluation can prove
//! it never touched them.

use super::actions::{action_decode, ControlTuple};
use super::render::{render_privileged, render_raw, PairedObservation, PrivilegedObs, RawObs};
use super::world::{reset, step, EnvConfig, Scenario, StepOutcome, WorldState};
use super::SimError;

pub struct Env {
    pub cfg: EnvConfig,
    pub state: WorldState,
    priv_render_count: usize,
}

impl Env {
    pub fn reset(cfg: EnvConfig, seed: u64, scenario: Scenario) -> Self {
        let state = reset(&cfg, seed, scenario);
        Self {
            cfg,
            state,
            priv_render_count: 0,
        }
    }

    pub fn privileged_render_count(&self) -> usize {
        self.priv_render_count
    }

    pub fn terminated(&self) -> bool {
        self.state.terminated.is_some()
    }

    pub fn render_privileged(&mut self) -> PrivilegedObs {
        self.priv_render_count += 1;
        render_privileged(&self.cfg, &self.state)
    }

    /// Sensor noise comes from a stream derived from (episode seed, step),
    /// so any single frame replays bit-exactly in isolation.
    pub fn render_raw(&mut self) -> RawObs {
        let mut step_rng = self.state.rng.split(self.state.step_count as u64);
        render_raw(&self.cfg, &self.state, &mut step_rng)
    }

    pub fn render_paired(&mut self) -> PairedObservation {
        PairedObservation {
            privileged: self.render_privileged(),
            raw: self.render_raw(),
        }
    }

    pub fn control(&self, action: usize) -> Result<ControlTuple, SimError> {
        action_decode(action)
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome, SimError> {
        let control = action_decode(action)?;
        step(&self.cfg, &mut self.state, &control)
    }

    /// Step and observe both streams; the raw noise draw order is identical
    /// to raw-only stepping, so replays agree bit-for-bit across modes.
    pub fn step_paired(
        &mut self,
        action: usize,
    ) -> Result<(StepOutcome, PairedObservation), SimError> {
        let outcome = self.step(action)?;
        let obs = self.render_paired();
        Ok((outcome, obs))
    }

    pub fn step_raw(&mut self, action: usize) -> Result<(StepOutcome, RawObs), SimError> {
        let outcome = self.step(action)?;
        Ok((outcome, self.render_raw()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_only_path_never_renders_privileged() {
        let mut env = Env::reset(EnvConfig::default(), 3, Scenario::LaneFollowSignal);
        let _ = env.render_raw();
        for _ in 0..10 {
            env.step_raw(15).unwrap();
        }
        assert_eq!(env.privileged_render_count(), 0);
    }

    #[test]
    fn raw_noise_stream_is_mode_independent() {
        let mut paired = Env::reset(EnvConfig::default(), 12, Scenario::LeadVehicleBrake);
        let mut raw_only = Env::reset(EnvConfig::default(), 12, Scenario::LeadVehicleBrake);
        let first_paired = paired.render_paired();
        let first_raw = raw_only.render_raw();
        assert_eq!(first_paired.raw, first_raw);
        for _ in 0..5 {
            let (_, obs_p) = paired.step_paired(5).unwrap();
            let (_, obs_r) = raw_only.step_raw(5).unwrap();
            assert_eq!(obs_p.raw, obs_r);
        }
    }
}
