//! Scripted reference driver with full state access. Used as an evaluation
//! sanity bound and to confirm every scenario admits a clean solution.

use super::actions::nearest_action;
use super::world::{EnvConfig, SignalPhase, WorldState};

pub struct OracleDriver;

impl OracleDriver {
    pub fn act(cfg: &EnvConfig, state: &WorldState) -> usize {
        let ego = &state.ego;
        let ego_lane = cfg.ego_lane_y();
        let left_lane = cfg.left_lane_y();

        // An agent occupies a lane whenever it overlaps it, so a mid-cut
        // vehicle blocks both lanes at once.
        let lane_occupied = |lane_y: f64, rear: f64, front: f64| {
            state.agents.iter().find(|a| {
                let occupies = (a.pose.y - lane_y).abs() < 0.55 * cfg.lane_width;
                let ahead = a.pose.x - ego.x;
                occupies && (rear..front).contains(&ahead)
            })
        };
        let lane_blocker = |lane_y: f64| lane_occupied(lane_y, -1.0, 14.0);

        let in_left = (ego.y - left_lane).abs() < (ego.y - ego_lane).abs();
        let current_lane = if in_left { left_lane } else { ego_lane };
        let other_lane = if in_left { ego_lane } else { left_lane };
        let cur_block = lane_blocker(current_lane);
        let other_block = lane_blocker(other_lane);

        let mut target_y = current_lane;
        let mut target_speed: f64 = 6.0;
        if let Some(b) = cur_block {
            if other_block.is_none() && b.pose.speed < 4.5 {
                target_y = other_lane;
            } else {
                // Follow: match the blocker's pace while it clears.
                let gap = b.pose.x - ego.x;
                if gap < 9.0 {
                    target_speed = target_speed.min(b.pose.speed.max(1.0));
                }
            }
        } else if in_left && lane_occupied(ego_lane, -7.0, 14.0).is_none() {
            // Merge back only with full front and rear clearance.
            target_y = ego_lane;
        }

        // Emergency spacing: flip displacement to open the gap.
        let imminent = state.agents.iter().any(|a| {
            let gap = a.pose.x - ego.x;
            (a.pose.y - ego.y).abs() < cfg.vehicle_width * 1.2
                && gap > 0.0
                && gap < cfg.vehicle_len + 1.5
                && ego.speed > a.pose.speed
        });
        if imminent {
            return nearest_action(0.5, 0.0, true);
        }

        // Red-signal hold: park short of the stop line until it turns green.
        if let (Some(signal), Some(SignalPhase::Red)) = (&state.signal, state.signal_phase(cfg)) {
            let dist = signal.x - ego.x;
            if dist > 0.0 {
                if dist < 3.0 {
                    return nearest_action(0.5, 0.0, true);
                }
                if dist < 12.0 {
                    target_speed = 1.0;
                }
            }
        }

        // Steering: settle on the target lane center, then level out.
        let heading_desired = (0.6 * (target_y - ego.y)).clamp(-0.7, 0.7);
        let steer = (3.0 * (heading_desired - ego.heading)).clamp(-1.0, 1.0);

        let throttle = if ego.speed < target_speed - 2.0 {
            0.7
        } else if ego.speed < target_speed {
            0.3
        } else {
            0.0
        };
        nearest_action(throttle, steer, false)
    }
}
