//! Full training-state checkpoints in the versioned array container:
//! parameters, optimizer moments, rng streams, return scales, and the
//! replay recipes needed for bit-exact resume.

use std::path::Path;

use crate::config::Config;
use crate::microdrive::world::InfractionCounts;
use crate::microdrive::Scenario;
use crate::numcore::container::{self, Entry};
use crate::numcore::{Array, OptimizerState, ParameterSet, Rng};
use crate::policy::PolicyParams;
use crate::worldmodel::{Stream, WorldModel};

use super::buffer::EpisodeRecipe;
use super::TrainError;

/// Independent deterministic streams used by a training stage.
#[derive(Clone, Debug)]
pub struct RngSet {
    pub env_seed: Rng,
    pub collect: Rng,
    pub batch: Rng,
    pub wm: Rng,
    pub imag: Rng,
    pub mix: Rng,
}

impl RngSet {
    pub fn new(seed: u64, stage: u64) -> Self {
        let master = Rng::new(seed).split(0xD1A1 + stage);
        Self {
            env_seed: master.split(1),
            collect: master.split(2),
            batch: master.split(3),
            wm: master.split(4),
            imag: master.split(5),
            mix: master.split(6),
        }
    }

    fn names() -> [&'static str; 6] {
        ["env_seed", "collect", "batch", "wm", "imag", "mix"]
    }

    fn get(&self, name: &str) -> &Rng {
        match name {
            "env_seed" => &self.env_seed,
            "collect" => &self.collect,
            "batch" => &self.batch,
            "wm" => &self.wm,
            "imag" => &self.imag,
            "mix" => &self.mix,
            _ => unreachable!(),
        }
    }

    fn get_mut(&mut self, name: &str) -> &mut Rng {
        match name {
            "env_seed" => &mut self.env_seed,
            "collect" => &mut self.collect,
            "batch" => &mut self.batch,
            "wm" => &mut self.wm,
            "imag" => &mut self.imag,
            "mix" => &mut self.mix,
            _ => unreachable!(),
        }
    }
}

pub struct Checkpoint {
    pub stage: u8,
    pub config_text: String,
    pub full_hash: u64,
    pub world_hash: u64,
    pub env_steps: u64,
    pub updates: u64,
    pub iterations_done: u64,
    pub metrics_cursor: u64,
    pub rngs: RngSet,
    pub priv_wm: WorldModel,
    pub priv_policy: PolicyParams,
    pub raw_wm: Option<WorldModel>,
    pub raw_policy: Option<PolicyParams>,
    pub optimizers: Vec<(String, OptimizerState)>,
    pub episodes: Vec<EpisodeRecipe>,
    pub buffer_next_id: u64,
    pub paired_buffer: bool,
}

/// Hash of the world-defining configuration keys (env, reward, model):
/// checkpoints refuse to load into an incompatible world.
pub fn world_hash(cfg: &Config) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (k, v) in cfg.iter() {
        if !(k.starts_with("env.") || k.starts_with("reward.") || k.starts_with("model.")) {
            continue;
        }
        for byte in k.bytes().chain([b'=']).chain(v.bytes()).chain([b'\n']) {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

fn push_params(entries: &mut Vec<Entry>, prefix: &str, ps: &ParameterSet) {
    for (name, arr) in ps.iter() {
        entries.push(Entry::f64(format!("{prefix}.{name}"), arr.clone()));
    }
}

fn push_optimizer(entries: &mut Vec<Entry>, key: &str, opt: &OptimizerState, ps: &ParameterSet) {
    entries.push(Entry::u64(format!("opt.{key}.step"), opt.step));
    entries.push(Entry::f64(format!("opt.{key}.lr"), Array::scalar(opt.learning_rate)));
    entries.push(Entry::f64(
        format!("opt.{key}.wd"),
        Array::scalar(opt.weight_decay),
    ));
    for (i, name) in ps.names().iter().enumerate() {
        entries.push(Entry::f64(
            format!("opt.{key}.m.{name}"),
            opt.first_moment[i].clone(),
        ));
        entries.push(Entry::f64(
            format!("opt.{key}.v.{name}"),
            opt.second_moment[i].clone(),
        ));
    }
}

fn wm_prefix(stream: Stream) -> String {
    format!("wm.{}", stream.tag())
}

impl Checkpoint {
    pub fn to_entries(&self) -> Vec<Entry> {
        let mut entries = Vec::new();
        entries.push(Entry::u64("meta.stage", self.stage as u64));
        entries.push(Entry::f64(
            "meta.config_text",
            Array::from_vec(
                vec![self.config_text.len().max(1)],
                if self.config_text.is_empty() {
                    vec![0.0]
                } else {
                    self.config_text.bytes().map(|b| b as f64).collect()
                },
            )
            .unwrap(),
        ));
        entries.push(Entry::u64("meta.full_hash", self.full_hash));
        entries.push(Entry::u64("meta.world_hash", self.world_hash));
        entries.push(Entry::u64("meta.env_steps", self.env_steps));
        entries.push(Entry::u64("meta.updates", self.updates));
        entries.push(Entry::u64("meta.iterations_done", self.iterations_done));
        entries.push(Entry::u64("meta.metrics_cursor", self.metrics_cursor));
        entries.push(Entry::u64("meta.paired", self.paired_buffer as u64));
        entries.push(Entry::u64("meta.buffer_next_id", self.buffer_next_id));
        entries.push(Entry::f64(
            "meta.scale.privileged",
            Array::scalar(self.priv_policy.return_scale),
        ));
        entries.push(Entry::f64(
            "meta.scale.raw",
            Array::scalar(self.raw_policy.as_ref().map_or(0.0, |p| p.return_scale)),
        ));

        for name in RngSet::names() {
            let (seed, counter) = self.rngs.get(name).state();
            entries.push(Entry::u64(format!("rng.{name}.seed"), seed));
            entries.push(Entry::u64(format!("rng.{name}.counter"), counter));
        }

        let models: Vec<(&WorldModel, &PolicyParams)> = match (&self.raw_wm, &self.raw_policy) {
            (Some(rwm), Some(rpol)) => {
                vec![(&self.priv_wm, &self.priv_policy), (rwm, rpol)]
            }
            _ => vec![(&self.priv_wm, &self.priv_policy)],
        };
        for (wm, policy) in &models {
            let prefix = wm_prefix(wm.stream);
            for (comp, ps) in wm.params.components() {
                push_params(&mut entries, &format!("{prefix}.{comp}"), ps);
            }
            let ppfx = format!("policy.{}", wm.stream.tag());
            push_params(&mut entries, &format!("{ppfx}.actor"), &policy.actor);
            push_params(&mut entries, &format!("{ppfx}.critic"), &policy.critic);
        }

        // Canonical order regardless of registration order.
        let mut opt_refs: Vec<&(String, OptimizerState)> = self.optimizers.iter().collect();
        opt_refs.sort_by(|a, b| a.0.cmp(&b.0));
        for (key, opt) in opt_refs {
            let ps = self
                .parameter_set_for(key)
                .unwrap_or_else(|| panic!("optimizer key {key} has no parameter set"));
            push_optimizer(&mut entries, key, opt, ps);
        }

        for (i, ep) in self.episodes.iter().enumerate() {
            let p = format!("buf.{i:06}");
            entries.push(Entry::u64(format!("{p}.id"), ep.id));
            entries.push(Entry::u64(format!("{p}.seed"), ep.seed));
            entries.push(Entry::u64(format!("{p}.scenario"), ep.scenario as u64));
            entries.push(Entry::f64(
                format!("{p}.stats"),
                Array::from_vec(
                    vec![5],
                    vec![
                        ep.progress,
                        ep.success as u8 as f64,
                        ep.infractions.collision as f64,
                        ep.infractions.off_road as f64,
                        ep.infractions.red_light as f64,
                    ],
                )
                .unwrap(),
            ));
            let n = ep.len();
            entries.push(Entry::f64(
                format!("{p}.actions"),
                Array::from_vec(vec![n], ep.actions.iter().map(|&a| a as f64).collect())
                    .unwrap(),
            ));
            entries.push(Entry::f64(
                format!("{p}.rewards"),
                Array::from_vec(vec![n], ep.rewards.clone()).unwrap(),
            ));
            entries.push(Entry::f64(
                format!("{p}.continues"),
                Array::from_vec(vec![n], ep.continues.clone()).unwrap(),
            ));
        }
        entries
    }

    /// Parameter set addressed by an optimizer key such as
    /// `wm.privileged.enc` or `policy.raw.actor`.
    fn parameter_set_for(&self, key: &str) -> Option<&ParameterSet> {
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["wm", stream, comp] => {
                let wm = if *stream == "privileged" {
                    &self.priv_wm
                } else {
                    self.raw_wm.as_ref()?
                };
                wm.params
                    .components()
                    .into_iter()
                    .find(|(c, _)| c == comp)
                    .map(|(_, ps)| ps)
            }
            ["policy", stream, which] => {
                let policy = if *stream == "privileged" {
                    &self.priv_policy
                } else {
                    self.raw_policy.as_ref()?
                };
                Some(match *which {
                    "actor" => &policy.actor,
                    _ => &policy.critic,
                })
            }
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        container::write_file(path, &self.to_entries())?;
        Ok(())
    }

    pub fn load(path: &Path, cfg: &Config) -> Result<Self, TrainError> {
        let entries = container::read_file(path)?;
        let mut map = std::collections::HashMap::new();
        for e in entries {
            map.insert(e.name.clone(), e);
        }
        let need_u64 = |name: &str| -> Result<u64, TrainError> {
            map.get(name)
                .map(|e| e.as_u64())
                .ok_or_else(|| TrainError::Checkpoint(format!("missing entry {name}")))
        };
        let need_f64 = |name: &str| -> Result<f64, TrainError> {
            map.get(name)
                .map(|e| e.array.data()[0])
                .ok_or_else(|| TrainError::Checkpoint(format!("missing entry {name}")))
        };

        let stored_world = need_u64("meta.world_hash")?;
        let expected_world = world_hash(cfg);
        if stored_world != expected_world {
            return Err(TrainError::Checkpoint(format!(
                "world config hash mismatch: checkpoint {stored_world:#x} vs config {expected_world:#x}"
            )));
        }

        let config_text: String = map
            .get("meta.config_text")
            .map(|e| {
                e.array
                    .data()
                    .iter()
                    .filter(|&&b| b != 0.0)
                    .map(|&b| b as u8 as char)
                    .collect()
            })
            .unwrap_or_default();

        let model_cfg = cfg.model_config()?;
        let mut scratch = Rng::new(0);

        let load_params = |ps: &mut ParameterSet, prefix: &str| -> Result<(), TrainError> {
            for name in ps.names().to_vec() {
                let full = format!("{prefix}.{name}");
                let e = map
                    .get(&full)
                    .ok_or_else(|| TrainError::Checkpoint(format!("missing entry {full}")))?;
                let dst = ps.get_mut(&name);
                if dst.shape() != e.array.shape() {
                    return Err(TrainError::Checkpoint(format!(
                        "shape mismatch for {full}: {:?} vs {:?}",
                        dst.shape(),
                        e.array.shape()
                    )));
                }
                dst.data_mut().copy_from_slice(e.array.data());
            }
            Ok(())
        };

        let raw_present = map.contains_key("wm.raw.gru.z.w");
        let raw_scalar_heads = map.contains_key("wm.raw.rew.mlp.l0.w");

        let mut priv_wm = WorldModel::new(model_cfg.clone(), Stream::Privileged, false, &mut scratch);
        for (comp, ps) in priv_wm.params.components_mut() {
            load_params(ps, &format!("wm.privileged.{comp}"))?;
        }
        let hidden = cfg.usize("model.hidden")?;
        let mut priv_policy = PolicyParams::new(model_cfg.latent_dim(), hidden, &mut scratch);
        load_params(&mut priv_policy.actor, "policy.privileged.actor")?;
        load_params(&mut priv_policy.critic, "policy.privileged.critic")?;
        priv_policy.return_scale = need_f64("meta.scale.privileged")?;

        let (raw_wm, raw_policy) = if raw_present {
            let mut rwm = WorldModel::new(model_cfg.clone(), Stream::Raw, raw_scalar_heads, &mut scratch);
            for (comp, ps) in rwm.params.components_mut() {
                load_params(ps, &format!("wm.raw.{comp}"))?;
            }
            let mut rpol = PolicyParams::new(model_cfg.latent_dim(), hidden, &mut scratch);
            load_params(&mut rpol.actor, "policy.raw.actor")?;
            load_params(&mut rpol.critic, "policy.raw.critic")?;
            rpol.return_scale = need_f64("meta.scale.raw")?;
            (Some(rwm), Some(rpol))
        } else {
            (None, None)
        };

        let mut rngs = RngSet::new(0, 0);
        for name in RngSet::names() {
            let seed = need_u64(&format!("rng.{name}.seed"))?;
            let counter = need_u64(&format!("rng.{name}.counter"))?;
            *rngs.get_mut(name) = Rng::from_state(seed, counter);
        }

        // Optimizer states, keyed in the same order save wrote them.
        let mut optimizers = Vec::new();
        let mut opt_keys: Vec<String> = map
            .keys()
            .filter_map(|k| {
                k.strip_prefix("opt.")
                    .and_then(|rest| rest.strip_suffix(".step"))
                    .map(str::to_string)
            })
            .collect();
        opt_keys.sort();
        let shell = Checkpoint {
            stage: 0,
            config_text: String::new(),
            full_hash: 0,
            world_hash: 0,
            env_steps: 0,
            updates: 0,
            iterations_done: 0,
            metrics_cursor: 0,
            rngs: RngSet::new(0, 0),
            priv_wm: priv_wm.clone(),
            priv_policy: priv_policy.clone(),
            raw_wm: raw_wm.clone(),
            raw_policy: raw_policy.clone(),
            optimizers: Vec::new(),
            episodes: Vec::new(),
            buffer_next_id: 0,
            paired_buffer: false,
        };
        for key in opt_keys {
            let ps = shell
                .parameter_set_for(&key)
                .ok_or_else(|| TrainError::Checkpoint(format!("unknown optimizer key {key}")))?;
            let mut opt = OptimizerState::new(
                ps,
                need_f64(&format!("opt.{key}.lr"))?,
                need_f64(&format!("opt.{key}.wd"))?,
            );
            opt.step = need_u64(&format!("opt.{key}.step"))?;
            for (i, name) in ps.names().iter().enumerate() {
                let m = map
                    .get(&format!("opt.{key}.m.{name}"))
                    .ok_or_else(|| TrainError::Checkpoint(format!("missing moment {key}.{name}")))?;
                let v = map
                    .get(&format!("opt.{key}.v.{name}"))
                    .ok_or_else(|| TrainError::Checkpoint(format!("missing moment {key}.{name}")))?;
                opt.first_moment[i].data_mut().copy_from_slice(m.array.data());
                opt.second_moment[i].data_mut().copy_from_slice(v.array.data());
            }
            optimizers.push((key, opt));
        }

        let mut episodes = Vec::new();
        let mut i = 0usize;
        loop {
            let p = format!("buf.{i:06}");
            if !map.contains_key(&format!("{p}.id")) {
                break;
            }
            let stats = &map[&format!("{p}.stats")].array;
            let actions = map[&format!("{p}.actions")]
                .array
                .data()
                .iter()
                .map(|&v| v as usize)
                .collect();
            episodes.push(EpisodeRecipe {
                id: need_u64(&format!("{p}.id"))?,
                seed: need_u64(&format!("{p}.seed"))?,
                scenario: match need_u64(&format!("{p}.scenario"))? {
                    0 => Scenario::LaneFollowSignal,
                    1 => Scenario::LeadVehicleBrake,
                    _ => Scenario::MergeCutIn,
                },
                actions,
                rewards: map[&format!("{p}.rewards")].array.data().to_vec(),
                continues: map[&format!("{p}.continues")].array.data().to_vec(),
                progress: stats.data()[0],
                success: stats.data()[1] != 0.0,
                infractions: InfractionCounts {
                    collision: stats.data()[2] as usize,
                    off_road: stats.data()[3] as usize,
                    red_light: stats.data()[4] as usize,
                },
            });
            i += 1;
        }

        Ok(Checkpoint {
            stage: need_u64("meta.stage")? as u8,
            config_text,
            full_hash: need_u64("meta.full_hash")?,
            world_hash: stored_world,
            env_steps: need_u64("meta.env_steps")?,
            updates: need_u64("meta.updates")?,
            iterations_done: need_u64("meta.iterations_done")?,
            metrics_cursor: need_u64("meta.metrics_cursor")?,
            rngs,
            priv_wm,
            priv_policy,
            raw_wm,
            raw_policy,
            optimizers,
            episodes,
            buffer_next_id: need_u64("meta.buffer_next_id")?,
            paired_buffer: need_u64("meta.paired")? != 0,
        })
    }
}

impl std::fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("stage", &self.stage)
            .field("env_steps", &self.env_steps)
            .field("updates", &self.updates)
            .field("episodes", &self.episodes.len())
            .finish()
    }
}
