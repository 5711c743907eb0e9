//! Paired rollout traces: drive one episode with the raw policy, filter
//! both streams' posteriors on the recorded observations, and emit each
//! step's decoded BEV masks as run-length-encoded binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Config;
use crate::microdrive::Env;
use crate::numcore::{Rng, Tape};
use crate::policy::ActMode;
use crate::trainer::{Checkpoint, LatentFilter, TrainError};
use crate::worldmodel::WorldModel;

use super::CliError;

#[derive(Serialize)]
struct DumpRecord {
    step: usize,
    action: usize,
    reward: f64,
    continue_flag: f64,
    h_mse: f64,
    priv_bev_rle: Vec<usize>,
    raw_bev_rle: Vec<usize>,
}

/// Runs of alternating 0/1 cells, starting with the zero-run length.
pub fn rle_binary(mask: &[f64], threshold: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut current = false;
    let mut run = 0usize;
    for &v in mask {
        let bit = v >= threshold;
        if bit == current {
            run += 1;
        } else {
            out.push(run);
            current = bit;
            run = 1;
        }
    }
    out.push(run);
    out
}

fn decode_mask(wm: &WorldModel, h: &crate::numcore::Array, s: &crate::numcore::Array) -> Vec<f64> {
    let tape = Tape::new();
    let bound = wm.bind(&tape, false);
    let hv = tape.constant(h.clone());
    let sv = tape.constant(s.clone());
    let logits = wm.decode_patches(&tape, &bound, hv, sv);
    let probs = tape.sigmoid(logits);
    wm.patches_to_mask(&tape.value(probs), 0)
}

pub fn dump_rollout(
    cfg: &Config,
    ckpt: &Checkpoint,
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    let raw_wm = ckpt
        .raw_wm
        .as_ref()
        .ok_or_else(|| CliError::Runtime("dump-rollout needs a stage-2 checkpoint".into()))?;
    let raw_policy = ckpt.raw_policy.as_ref().unwrap();
    let env_cfg = cfg.env_config().map_err(TrainError::from)?;
    let scenario = crate::microdrive::Scenario::parse(cfg.get("eval.scenario"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut env = Env::reset(env_cfg, seed, scenario);
    let mut raw_filter = LatentFilter::new(raw_wm);
    let mut priv_filter = LatentFilter::new(&ckpt.priv_wm);
    let mut rng = Rng::new(0xD0_11 ^ seed);

    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = out_dir.join("rollout.jsonl");
    let mut file =
        std::fs::File::create(&path).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut step = 0usize;
    while !env.terminated() {
        let paired = env.render_paired();
        let raw_latent = raw_filter
            .observe_raw(&paired.raw, &mut rng)
            .map_err(TrainError::from)?;
        priv_filter
            .observe_priv(&paired.privileged, &mut rng)
            .map_err(TrainError::from)?;
        let action = raw_policy.act(&raw_latent, ActMode::Greedy, &mut rng);
        let outcome = env.step(action).map_err(TrainError::from)?;
        raw_filter.note_action(action);
        priv_filter.note_action(action);

        let (raw_h, raw_s) = raw_filter.state();
        let (priv_h, priv_s) = priv_filter.state();
        let raw_mask = decode_mask(raw_wm, &raw_h, &raw_s);
        let priv_mask = decode_mask(&ckpt.priv_wm, &priv_h, &priv_s);
        let h_mse = raw_h
            .data()
            .iter()
            .zip(priv_h.data().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / raw_h.len() as f64;

        let record = DumpRecord {
            step,
            action,
            reward: outcome.reward,
            continue_flag: outcome.continue_flag,
            h_mse,
            priv_bev_rle: rle_binary(&priv_mask, 0.5),
            raw_bev_rle: rle_binary(&raw_mask, 0.5),
        };
        let line = serde_json::to_string(&record).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| CliError::Runtime(e.to_string()))?;
        step += 1;
    }
    Ok(path)
}
