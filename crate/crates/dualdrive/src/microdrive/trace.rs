//! JSONL episode traces.

use serde::{Deserialize, Serialize};

use super::world::{Infraction, StepOutcome, Termination, WorldState};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub continue_flag: f64,
    pub progress: f64,
    pub ego_x: f64,
    pub ego_y: f64,
    pub ego_heading: f64,
    pub ego_speed: f64,
    pub infractions: Vec<Infraction>,
    pub termination: Option<Termination>,
}

impl TraceRecord {
    pub fn from_step(state: &WorldState, action: usize, outcome: &StepOutcome) -> Self {
        Self {
            step: state.step_count,
            action,
            reward: outcome.reward,
            continue_flag: outcome.continue_flag,
            progress: outcome.info.progress,
            ego_x: state.ego.x,
            ego_y: state.ego.y,
            ego_heading: state.ego.heading,
            ego_speed: state.ego.speed,
            infractions: outcome.info.infractions.clone(),
            termination: outcome.info.termination,
        }
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("trace serialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdrive::env::Env;
    use crate::microdrive::world::{EnvConfig, Scenario};

    #[test]
    fn one_line_per_step() {
        let mut env = Env::reset(EnvConfig::default(), 2, Scenario::LaneFollowSignal);
        let mut lines = Vec::new();
        for _ in 0..5 {
            let outcome = env.step(15).unwrap();
            lines.push(TraceRecord::from_step(&env.state, 15, &outcome).to_jsonl());
        }
        assert_eq!(lines.len(), 5);
        for line in &lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("reward").is_some());
            assert!(v.get("action").is_some());
        }
    }
}
