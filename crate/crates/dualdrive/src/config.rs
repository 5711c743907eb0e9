//! Flat dotted-key configuration: code-level defaults for every tunable,
//! optional file overrides, then command-line overrides. Unknown keys are
//! rejected; the resolved map hashes into every run artifact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::guidance::{GuidanceWeights, TransferMode, TransferSpec};
use crate::microdrive::{EnvConfig, Scenario};
use crate::worldmodel::{ModelConfig, WmLossWeights};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Parse { line: usize, text: String },
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("key {key}: cannot parse `{value}` as {wanted}")]
    BadValue {
        key: String,
        value: String,
        wanted: &'static str,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn defaults() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: &str| {
        m.insert(k.to_string(), v.to_string());
    };

    // Micro-simulator kinematics, geometry, observations.
    put("env.dt", "0.1");
    put("env.accel", "3.0");
    put("env.v_max", "10.0");
    put("env.kappa", "0.5");
    put("env.drag", "0.1");
    put("env.horizon", "300");
    put("env.road_half_width", "4.0");
    put("env.lane_width", "4.0");
    put("env.vehicle_len", "4.0");
    put("env.vehicle_width", "1.8");
    put("env.route_len", "48.0");
    put("env.waypoint_spacing", "2.0");
    put("env.signal_x", "26.0");
    put("env.signal_red_s", "2.5");
    put("env.signal_green_s", "6.0");
    put("env.obs_size", "32");
    put("env.cell_m", "0.5");
    put("env.behind_m", "4.0");
    put("env.fov_deg", "120.0");
    put("env.noise_sigma", "0.05");

    // Reward ledger.
    put("reward.progress", "10.0");
    put("reward.collision", "1.0");
    put("reward.offroad", "0.5");
    put("reward.red_light", "0.3");
    put("reward.steer", "0.02");
    put("reward.success", "5.0");

    // World-model dimensions (BEV mask channel semantics, in order:
    // road, lane-lines, route, ego, vehicles, pedestrians-placeholder,
    // signals-red, signals-green).
    put("model.grid_side", "8");
    put("model.feat", "16");
    put("model.det_dim", "256");
    put("model.groups", "8");
    put("model.classes", "8");
    put("model.hidden", "256");
    put("model.dec_feat", "16");
    put("model.unimix", "0.01");

    // World-model loss and optimizer.
    put("wm.beta_pred", "1.0");
    put("wm.beta_dyn", "0.5");
    put("wm.beta_rep", "0.1");
    put("wm.lr", "1e-5");
    put("wm.grad_clip", "100.0");
    put("wm.weight_decay", "0.0");

    // Behavior policy.
    put("policy.gamma", "0.997");
    put("policy.lambda", "0.95");
    put("policy.entropy", "3e-4");
    put("policy.horizon", "15");
    put("policy.lr", "3e-5");
    put("policy.grad_clip", "100.0");
    put("policy.weight_decay", "0.0");
    put("policy.index_shift", "false");
    put("policy.ema_decay", "0.99");

    // Guidance mechanism and ablation switches.
    put("guidance.beta_e", "10.0");
    put("guidance.beta_s", "10.0");
    put("guidance.beta_h", "5.0");
    put("guidance.kl_reverse", "false");
    put("guidance.align_e", "true");
    put("guidance.align_h", "true");
    put("guidance.align_s", "true");
    put("guidance.head_guidance", "true");
    put("guidance.raw_reward_head", "false");
    put("guidance.raw_continue_head", "false");
    put("transfer.rssm", "copy");
    put("transfer.decoder", "copy");
    put("transfer.policy", "copy");
    put("distill.weight", "0.1");

    // Training pipeline.
    put("trainer.seed", "0");
    put("trainer.iterations", "100");
    put("trainer.batch", "8");
    put("trainer.seq_len", "16");
    put("trainer.updates_per_iter", "16");
    put("trainer.prefill_episodes", "5");
    put("trainer.buffer_capacity", "100000");
    put("trainer.imag_starts", "32");
    put("trainer.mix_priv_collect", "0.1");
    put("trainer.env_step_budget", "200000");
    put("trainer.ckpt_every", "0");
    put("trainer.scenarios", "lane-follow-signal");

    // Evaluation suite.
    put("eval.scenario", "lane-follow-signal");
    put("eval.seed_base", "500");
    put("eval.episodes", "10");
    put("eval.workers", "1");

    // Metrics.
    put("metrics.wall_clock", "false");
    put("metrics.every", "1");

    m
}

impl Default for Config {
    fn default() -> Self {
        Self { values: defaults() }
    }
}

impl Config {
    /// Parse a `key = value` file over the defaults. `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: lineno + 1,
                    text: raw.to_string(),
                });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !self.values.contains_key(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key {key} missing from defaults"))
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.get(key).into(),
            wanted: "float",
        })
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.get(key).into(),
            wanted: "integer",
        })
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.get(key).into(),
            wanted: "u64",
        })
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        match self.get(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(ConfigError::BadValue {
                key: key.into(),
                value: other.into(),
                wanted: "bool",
            }),
        }
    }

    pub fn transfer_mode(&self, key: &str) -> Result<TransferMode, ConfigError> {
        match self.get(key) {
            "copy" => Ok(TransferMode::Copy),
            "freeze" => Ok(TransferMode::CopyFreeze),
            "fresh" => Ok(TransferMode::Fresh),
            other => Err(ConfigError::BadValue {
                key: key.into(),
                value: other.into(),
                wanted: "copy|freeze|fresh",
            }),
        }
    }

    /// Stable FNV-1a hash of the resolved `key = value` map.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (k, v) in &self.values {
            for byte in k.bytes().chain([b'=']).chain(v.bytes()).chain([b'\n']) {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.values.iter()
    }

    /// Canonical text form: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn env_config(&self) -> Result<EnvConfig, ConfigError> {
        Ok(EnvConfig {
            dt: self.f64("env.dt")?,
            accel: self.f64("env.accel")?,
            v_max: self.f64("env.v_max")?,
            kappa: self.f64("env.kappa")?,
            drag: self.f64("env.drag")?,
            horizon: self.usize("env.horizon")?,
            road_half_width: self.f64("env.road_half_width")?,
            lane_width: self.f64("env.lane_width")?,
            vehicle_len: self.f64("env.vehicle_len")?,
            vehicle_width: self.f64("env.vehicle_width")?,
            route_len: self.f64("env.route_len")?,
            waypoint_spacing: self.f64("env.waypoint_spacing")?,
            signal_x: self.f64("env.signal_x")?,
            signal_red_s: self.f64("env.signal_red_s")?,
            signal_green_s: self.f64("env.signal_green_s")?,
            obs_size: self.usize("env.obs_size")?,
            cell_m: self.f64("env.cell_m")?,
            behind_m: self.f64("env.behind_m")?,
            fov_deg: self.f64("env.fov_deg")?,
            noise_sigma: self.f64("env.noise_sigma")?,
            reward_progress: self.f64("reward.progress")?,
            reward_collision: self.f64("reward.collision")?,
            reward_offroad: self.f64("reward.offroad")?,
            reward_red_light: self.f64("reward.red_light")?,
            reward_steer: self.f64("reward.steer")?,
            reward_success: self.f64("reward.success")?,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        let cfg = ModelConfig {
            obs_size: self.usize("env.obs_size")?,
            priv_channels: crate::microdrive::CHANNELS,
            grid_side: self.usize("model.grid_side")?,
            feat: self.usize("model.feat")?,
            det_dim: self.usize("model.det_dim")?,
            groups: self.usize("model.groups")?,
            classes: self.usize("model.classes")?,
            hidden: self.usize("model.hidden")?,
            dec_feat: self.usize("model.dec_feat")?,
            unimix: self.f64("model.unimix")?,
        };
        if cfg.obs_size % cfg.grid_side != 0 {
            return Err(ConfigError::Invalid(format!(
                "model.grid_side {} must divide env.obs_size {}",
                cfg.grid_side, cfg.obs_size
            )));
        }
        if !(0.0..1.0).contains(&cfg.unimix) {
            return Err(ConfigError::Invalid("model.unimix outside [0,1)".into()));
        }
        Ok(cfg)
    }

    pub fn wm_weights(&self) -> Result<WmLossWeights, ConfigError> {
        Ok(WmLossWeights {
            pred: self.f64("wm.beta_pred")?,
            dynamics: self.f64("wm.beta_dyn")?,
            representation: self.f64("wm.beta_rep")?,
        })
    }

    /// Eq.-weights with the per-term alignment switches already applied.
    pub fn guidance_weights(&self) -> Result<GuidanceWeights, ConfigError> {
        Ok(GuidanceWeights {
            beta_e: if self.bool("guidance.align_e")? {
                self.f64("guidance.beta_e")?
            } else {
                0.0
            },
            beta_s: if self.bool("guidance.align_s")? {
                self.f64("guidance.beta_s")?
            } else {
                0.0
            },
            beta_h: if self.bool("guidance.align_h")? {
                self.f64("guidance.beta_h")?
            } else {
                0.0
            },
        })
    }

    pub fn transfer_spec(&self) -> Result<TransferSpec, ConfigError> {
        Ok(TransferSpec {
            rssm: self.transfer_mode("transfer.rssm")?,
            decoder: self.transfer_mode("transfer.decoder")?,
            policy: self.transfer_mode("transfer.policy")?,
        })
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>, ConfigError> {
        self.get("trainer.scenarios")
            .split(',')
            .map(|s| {
                Scenario::parse(s.trim())
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env_config()?;
        self.model_config()?;
        self.wm_weights()?;
        self.guidance_weights()?;
        self.transfer_spec()?;
        let scenarios = self.scenarios()?;
        if scenarios.is_empty() {
            return Err(ConfigError::Invalid("trainer.scenarios empty".into()));
        }
        Scenario::parse(self.get("eval.scenario"))
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let gamma = self.f64("policy.gamma")?;
        if !(0.0 < gamma && gamma <= 1.0) {
            return Err(ConfigError::Invalid("policy.gamma outside (0,1]".into()));
        }
        let lambda = self.f64("policy.lambda")?;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(ConfigError::Invalid("policy.lambda outside [0,1]".into()));
        }
        if self.f64("policy.entropy")? < 0.0 {
            return Err(ConfigError::Invalid("policy.entropy negative".into()));
        }
        for key in ["trainer.batch", "trainer.seq_len"] {
            if self.usize(key)? == 0 {
                return Err(ConfigError::Invalid(format!("{key} must be positive")));
            }
        }
        Ok(())
    }
}

/// Ablation flags exposed on the stage-2 command line, one per paper row.
pub const ABLATION_FLAGS: [(&str, &str, &str); 9] = [
    ("no-e-align", "guidance.align_e", "false"),
    ("no-h-align", "guidance.align_h", "false"),
    ("no-s-align", "guidance.align_s", "false"),
    ("raw-reward-head", "guidance.raw_reward_head", "true"),
    ("raw-continue-head", "guidance.raw_continue_head", "true"),
    ("no-head-guidance", "guidance.head_guidance", "false"),
    ("fresh-rssm", "transfer.rssm", "fresh"),
    ("fresh-decoder", "transfer.decoder", "fresh"),
    ("no-finetune", "transfer.policy", "freeze"),
];

pub fn apply_ablations(cfg: &mut Config, flags: &str) -> Result<Vec<String>, ConfigError> {
    let mut applied = Vec::new();
    for flag in flags.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some((_, key, value)) = ABLATION_FLAGS.iter().find(|(name, _, _)| *name == flag)
        else {
            let valid: Vec<&str> = ABLATION_FLAGS.iter().map(|(n, _, _)| *n).collect();
            return Err(ConfigError::Invalid(format!(
                "unknown ablation flag `{flag}`; valid flags: {}",
                valid.join(", ")
            )));
        };
        cfg.set(key, value)?;
        applied.push(flag.to_string());
    }
    Ok(applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut cfg = Config::default();
        assert!(cfg.set("env.dt", "0.05").is_ok());
        assert!(matches!(
            cfg.set("env.gravity", "9.8"),
            Err(ConfigError::UnknownKey(_))
        ));
    }

    #[test]
    fn hash_tracks_values() {
        let a = Config::default();
        let mut b = Config::default();
        assert_eq!(a.hash(), b.hash());
        b.set("trainer.seed", "7").unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn file_roundtrip() {
        let dir = std::env::temp_dir().join("dualdrive-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("test.conf");
        std::fs::write(&path, "# comment\ntrainer.seed = 9\nenv.dt=0.05 # inline\n").unwrap();
        let cfg = Config::from_file(&path).unwrap();
        assert_eq!(cfg.u64("trainer.seed").unwrap(), 9);
        assert_eq!(cfg.f64("env.dt").unwrap(), 0.05);
    }

    #[test]
    fn missing_file_is_an_error_naming_the_path() {
        let err = Config::from_file(Path::new("/nonexistent/path.conf")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/path.conf"));
    }

    #[test]
    fn ablation_flags_map_to_keys() {
        let mut cfg = Config::default();
        apply_ablations(&mut cfg, "no-e-align,no-h-align,no-s-align").unwrap();
        assert_eq!(cfg.get("guidance.align_e"), "false");
        assert_eq!(cfg.get("guidance.align_h"), "false");
        assert_eq!(cfg.get("guidance.align_s"), "false");
        let w = cfg.guidance_weights().unwrap();
        assert_eq!((w.beta_e, w.beta_s, w.beta_h), (0.0, 0.0, 0.0));

        let err = apply_ablations(&mut cfg, "no-such-flag").unwrap_err();
        assert!(err.to_string().contains("no-head-guidance"));
    }

    #[test]
    fn default_guidance_weights_match_paper_values() {
        let w = Config::default().guidance_weights().unwrap();
        assert_eq!((w.beta_e, w.beta_s, w.beta_h), (10.0, 10.0, 5.0));
    }
}
