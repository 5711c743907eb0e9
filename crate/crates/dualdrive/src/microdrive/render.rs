//! Ego-centric rasterization: binary BEV channel masks for the privileged
//! stream and a degraded grayscale view for the raw stream.

use crate::numcore::Rng;

use super::world::{EnvConfig, Pose, SignalPhase, WorldState};

pub const CHANNELS: usize = 8;
pub const CH_ROAD: usize = 0;
pub const CH_LANE_LINES: usize = 1;
pub const CH_ROUTE: usize = 2;
pub const CH_EGO: usize = 3;
pub const CH_VEHICLES: usize = 4;
pub const CH_PEDESTRIANS: usize = 5;
pub const CH_SIGNAL_RED: usize = 6;
pub const CH_SIGNAL_GREEN: usize = 7;

/// Ground-truth BEV mask plus ego vector. Mask layout is `[H][W][C]`
/// row-major: rows run rear-to-front, columns right-to-left in ego frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivilegedObs {
    pub size: usize,
    pub mask: Vec<f64>,
    pub ego_vector: [f64; 5],
}

/// Grayscale forward-wedge raster plus the same ego vector layout.
#[derive(Clone, Debug, PartialEq)]
pub struct RawObs {
    pub size: usize,
    pub pixels: Vec<f64>,
    pub ego_vector: [f64; 5],
}

#[derive(Clone, Debug)]
pub struct PairedObservation {
    pub privileged: PrivilegedObs,
    pub raw: RawObs,
}

fn ego_vector(state: &WorldState) -> [f64; 5] {
    [
        state.ego.speed,
        state.prev_control.throttle,
        state.prev_control.brake,
        state.prev_control.steer,
        if state.prev_control.reverse { 1.0 } else { 0.0 },
    ]
}

/// Cell center in world coordinates: `r` runs forward, `c` runs left.
fn cell_world(cfg: &EnvConfig, ego: &Pose, r: usize, c: usize) -> (f64, f64, f64, f64) {
    let half_span = cfg.obs_size as f64 * cfg.cell_m / 2.0;
    let forward = (r as f64 + 0.5) * cfg.cell_m - cfg.behind_m;
    let lateral = (c as f64 + 0.5) * cfg.cell_m - half_span;
    let (cos_h, sin_h) = (ego.heading.cos(), ego.heading.sin());
    let wx = ego.x + forward * cos_h - lateral * sin_h;
    let wy = ego.y + forward * sin_h + lateral * cos_h;
    (wx, wy, forward, lateral)
}

fn point_in_obb(px: f64, py: f64, pose: &Pose, len: f64, width: f64) -> bool {
    let dx = px - pose.x;
    let dy = py - pose.y;
    let (c, s) = (pose.heading.cos(), pose.heading.sin());
    let local_x = dx * c + dy * s;
    let local_y = -dx * s + dy * c;
    local_x.abs() <= len / 2.0 && local_y.abs() <= width / 2.0
}

fn route_hit(state: &WorldState, wx: f64, wy: f64) -> bool {
    if state.route.is_empty() {
        return false;
    }
    let first = state.route[0];
    let last = state.route[state.route.len() - 1];
    wx >= first.0 && wx <= last.0 && (wy - first.1).abs() <= 1.0
}

pub fn render_privileged(cfg: &EnvConfig, state: &WorldState) -> PrivilegedObs {
    let n = cfg.obs_size;
    let mut mask = vec![0.0; n * n * CHANNELS];
    let phase = state.signal_phase(cfg);
    for r in 0..n {
        for c in 0..n {
            let (wx, wy, _, _) = cell_world(cfg, &state.ego, r, c);
            let base = (r * n + c) * CHANNELS;
            if wy.abs() <= cfg.road_half_width {
                mask[base + CH_ROAD] = 1.0;
            }
            for line_y in [-cfg.road_half_width, 0.0, cfg.road_half_width] {
                if (wy - line_y).abs() <= 0.25 {
                    mask[base + CH_LANE_LINES] = 1.0;
                }
            }
            if route_hit(state, wx, wy) {
                mask[base + CH_ROUTE] = 1.0;
            }
            if point_in_obb(wx, wy, &state.ego, cfg.vehicle_len, cfg.vehicle_width) {
                mask[base + CH_EGO] = 1.0;
            }
            for agent in &state.agents {
                if point_in_obb(wx, wy, &agent.pose, cfg.vehicle_len, cfg.vehicle_width) {
                    mask[base + CH_VEHICLES] = 1.0;
                }
            }
            if let (Some(signal), Some(p)) = (&state.signal, phase) {
                if (wx - signal.x).abs() <= 0.4 && wy.abs() <= cfg.road_half_width {
                    let ch = match p {
                        SignalPhase::Red => CH_SIGNAL_RED,
                        SignalPhase::Green => CH_SIGNAL_GREEN,
                    };
                    mask[base + ch] = 1.0;
                }
            }
        }
    }
    PrivilegedObs {
        size: n,
        mask,
        ego_vector: ego_vector(state),
    }
}

const I_TERRAIN: f64 = 0.2;
const I_ROAD: f64 = 0.45;
const I_LANE_LINE: f64 = 0.75;
const I_AGENT: f64 = 0.9;
const I_SIGNAL_RED: f64 = 1.0;
const I_SIGNAL_GREEN: f64 = 0.6;

struct Occluder {
    dist: f64,
    ang_min: f64,
    ang_max: f64,
}

pub fn render_raw(cfg: &EnvConfig, state: &WorldState, rng: &mut Rng) -> RawObs {
    let n = cfg.obs_size;
    let mut pixels = vec![0.0; n * n];
    let half_fov = cfg.fov_deg.to_radians() / 2.0;
    let phase = state.signal_phase(cfg);

    // Angular shadows cast by agents, in the ego frame.
    let (cos_h, sin_h) = (state.ego.heading.cos(), state.ego.heading.sin());
    let occluders: Vec<Occluder> = state
        .agents
        .iter()
        .map(|agent| {
            let mut ang_min = f64::INFINITY;
            let mut ang_max = f64::NEG_INFINITY;
            let (ac, asn) = (agent.pose.heading.cos(), agent.pose.heading.sin());
            for &sx in &[-cfg.vehicle_len / 2.0, cfg.vehicle_len / 2.0] {
                for &sy in &[-cfg.vehicle_width / 2.0, cfg.vehicle_width / 2.0] {
                    let wx = agent.pose.x + sx * ac - sy * asn;
                    let wy = agent.pose.y + sx * asn + sy * ac;
                    let dx = wx - state.ego.x;
                    let dy = wy - state.ego.y;
                    let fx = dx * cos_h + dy * sin_h;
                    let fy = -dx * sin_h + dy * cos_h;
                    let ang = fy.atan2(fx);
                    ang_min = ang_min.min(ang);
                    ang_max = ang_max.max(ang);
                }
            }
            let dx = agent.pose.x - state.ego.x;
            let dy = agent.pose.y - state.ego.y;
            Occluder {
                dist: (dx * dx + dy * dy).sqrt(),
                ang_min,
                ang_max,
            }
        })
        .collect();

    for r in 0..n {
        for c in 0..n {
            let (wx, wy, forward, lateral) = cell_world(cfg, &state.ego, r, c);
            let dist = (forward * forward + lateral * lateral).sqrt();
            let ang = lateral.atan2(forward);
            let in_fov = dist < 1.0 || ang.abs() <= half_fov;
            if !in_fov {
                continue; // outside the wedge stays exactly zero
            }

            let on_agent_idx = state
                .agents
                .iter()
                .position(|a| point_in_obb(wx, wy, &a.pose, cfg.vehicle_len, cfg.vehicle_width));
            let on_agent = on_agent_idx.is_some();
            // A cell is shadowed by any nearer agent other than the one it
            // sits on.
            let occluded = occluders.iter().enumerate().any(|(j, o)| {
                Some(j) != on_agent_idx
                    && dist > o.dist + 1.0
                    && ang >= o.ang_min
                    && ang <= o.ang_max
            });

            let mut v = I_TERRAIN;
            if !occluded {
                if wy.abs() <= cfg.road_half_width {
                    v = I_ROAD;
                }
                for line_y in [-cfg.road_half_width, 0.0, cfg.road_half_width] {
                    if (wy - line_y).abs() <= 0.25 {
                        v = I_LANE_LINE;
                    }
                }
                if let (Some(signal), Some(p)) = (&state.signal, phase) {
                    if (wx - signal.x).abs() <= 0.4 && wy.abs() <= cfg.road_half_width {
                        v = match p {
                            SignalPhase::Red => I_SIGNAL_RED,
                            SignalPhase::Green => I_SIGNAL_GREEN,
                        };
                    }
                }
                if on_agent {
                    v = I_AGENT;
                }
            }
            if cfg.noise_sigma > 0.0 {
                v += cfg.noise_sigma * rng.normal();
            }
            pixels[r * n + c] = v.clamp(0.0, 1.0);
        }
    }

    RawObs {
        size: n,
        pixels,
        ego_vector: ego_vector(state),
    }
}

pub fn render_paired(cfg: &EnvConfig, state: &WorldState, rng: &mut Rng) -> PairedObservation {
    PairedObservation {
        privileged: render_privileged(cfg, state),
        raw: render_raw(cfg, state, rng),
    }
}
