//! Command-line surface: training stages, evaluation, gradient checking,
//! and rollout dumps. Exit codes: 0 success, 1 usage, 2 runtime failure.

mod dump;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{apply_ablations, Config};
use crate::microdrive::Scenario;
use crate::trainer::{default_suite, evaluate, Checkpoint};
use crate::worldmodel::Stream;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser)]
#[command(
    name = "dualdrive",
    version,
    about = "Dual-stream world-model RL on a seeded 2D driving micro-simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the privileged world model and policy (stage 1).
    TrainStage1 {
        /// Config file of `key = value` lines over the built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override trainer.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for checkpoints, metrics, and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Inline overrides, repeatable: --set key=value.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Resume from an earlier stage-1 checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the raw-sensor world model and policy under guidance (stage 2).
    TrainStage2 {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Stage-1 checkpoint to guide from.
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated ablation flags (no-e-align, no-h-align,
        /// no-s-align, raw-reward-head, raw-continue-head,
        /// no-head-guidance, fresh-rssm, fresh-decoder, no-finetune).
        #[arg(long)]
        ablate: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Greedy closed-loop evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated scenario names; defaults to the config suite.
        #[arg(long)]
        suite: Option<String>,
        /// Episodes per scenario (seeds count up from eval.seed_base).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate a specific stream (privileged|raw); defaults to raw
        /// when the checkpoint has one.
        #[arg(long)]
        stream: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Finite-difference gradient oracles over every loss.
    GradCheck {
        /// Oracle suite seed.
        #[arg(long, default_value_t = 2026)]
        seed: u64,
        /// Check a single module (wm|guidance|policy|all).
        #[arg(long, default_value = "all")]
        module: String,
    },
    /// Paired latent / decoded-BEV traces from a stage-2 checkpoint.
    DumpRollout {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 500)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<crate::trainer::TrainError> for CliError {
    fn from(e: crate::trainer::TrainError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        match e {
            crate::config::ConfigError::UnknownKey(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn load_config(
    path: &Option<PathBuf>,
    seed: Option<u64>,
    set: &[String],
) -> Result<Config, CliError> {
    let mut cfg = match path {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    if let Some(seed) = seed {
        cfg.set("trainer.seed", &seed.to_string())?;
    }
    apply_sets(&mut cfg, set)?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_sets(cfg: &mut Config, set: &[String]) -> Result<(), CliError> {
    for pair in set {
        let Some((k, v)) = pair.split_once('=') else {
            return Err(CliError::Usage(format!(
                "--set expects key=value, got `{pair}`"
            )));
        };
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(())
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    args: &BTreeMap<String, String>,
    cfg: &Config,
) -> Result<(), CliError> {
    #[derive(serde::Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        args: &'a BTreeMap<String, String>,
        config: BTreeMap<&'a String, &'a String>,
        config_hash: String,
        build_id: String,
    }
    let manifest = Manifest {
        command,
        args,
        config: cfg.iter().collect(),
        config_hash: format!("{:016x}", cfg.hash()),
        build_id: format!("dualdrive-{}", env!("CARGO_PKG_VERSION")),
    };
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let path = out_dir.join("run_manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&path, text + "\n")
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn dispatch(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::TrainStage1 {
            config,
            seed,
            out,
            set,
            resume,
        } => {
            let cfg = load_config(&config, seed, &set)?;
            let mut args = BTreeMap::new();
            if let Some(c) = &config {
                args.insert("config".into(), c.display().to_string());
            }
            args.insert("out".into(), out.display().to_string());
            if let Some(r) = &resume {
                args.insert("resume".into(), r.display().to_string());
            }
            write_manifest(&out, "train-stage1", &args, &cfg)?;
            let output =
                crate::trainer::stage1_train_resumable(&cfg, &out, resume.as_deref())?;
            println!(
                "stage1 complete: {} env steps, {} updates",
                output.env_steps, output.updates
            );
            println!("checkpoint: {}", output.checkpoint_path.display());
            println!("metrics: {}", output.metrics_path.display());
            Ok(EXIT_OK)
        }
        Command::TrainStage2 {
            config,
            stage1,
            seed,
            out,
            ablate,
            set,
        } => {
            let mut cfg = load_config(&config, seed, &set)?;
            let applied = match &ablate {
                Some(flags) => apply_ablations(&mut cfg, flags)
                    .map_err(|e| CliError::Usage(e.to_string()))?,
                None => Vec::new(),
            };
            cfg.validate()?;
            if !stage1.exists() {
                return Err(CliError::Runtime(format!(
                    "stage-1 checkpoint not found: {}",
                    stage1.display()
                )));
            }
            let mut args = BTreeMap::new();
            args.insert("stage1".into(), stage1.display().to_string());
            args.insert("out".into(), out.display().to_string());
            if !applied.is_empty() {
                args.insert("ablate".into(), applied.join(","));
            }
            write_manifest(&out, "train-stage2", &args, &cfg)?;
            let output = crate::trainer::stage2_train(&cfg, &stage1, &out)?;
            println!(
                "stage2 complete: {} env steps, {} updates",
                output.env_steps, output.updates
            );
            println!("checkpoint: {}", output.checkpoint_path.display());
            Ok(EXIT_OK)
        }
        Command::Eval {
            ckpt,
            suite,
            episodes,
            out,
            stream,
            set,
        } => {
            // The checkpoint carries its resolved config.
            let probe = Config::default();
            let loaded = match Checkpoint::load(&ckpt, &probe) {
                Ok(c) => c,
                Err(_) => {
                    // World keys may differ from defaults: parse the stored
                    // text first, then reload against it.
                    let text = peek_config_text(&ckpt)?;
                    let cfg = Config::from_text(&text)?;
                    Checkpoint::load(&ckpt, &cfg)?
                }
            };
            let mut cfg = Config::from_text(&loaded.config_text)?;
            apply_sets(&mut cfg, &set)?;
            let env_cfg = cfg.env_config()?;

            let scenarios: Vec<Scenario> = match &suite {
                Some(names) => names
                    .split(',')
                    .map(|n| Scenario::parse(n.trim()).map_err(|e| CliError::Usage(e.to_string())))
                    .collect::<Result<_, _>>()?,
                None => vec![Scenario::parse(cfg.get("eval.scenario"))
                    .map_err(|e| CliError::Runtime(e.to_string()))?],
            };
            let episodes = episodes.unwrap_or(cfg.usize("eval.episodes")?);
            let seed_base = cfg.u64("eval.seed_base")?;
            let mut full_suite = Vec::new();
            for sc in scenarios {
                full_suite.extend(default_suite(sc, seed_base, episodes));
            }

            let stream = match stream.as_deref() {
                Some("privileged") => Stream::Privileged,
                Some("raw") => Stream::Raw,
                Some(other) => {
                    return Err(CliError::Usage(format!(
                        "unknown stream `{other}` (expected privileged or raw)"
                    )))
                }
                None => {
                    if loaded.raw_wm.is_some() {
                        Stream::Raw
                    } else {
                        Stream::Privileged
                    }
                }
            };
            let (wm, policy) = match stream {
                Stream::Privileged => (&loaded.priv_wm, &loaded.priv_policy),
                Stream::Raw => (
                    loaded.raw_wm.as_ref().ok_or_else(|| {
                        CliError::Runtime("checkpoint has no raw stream".into())
                    })?,
                    loaded.raw_policy.as_ref().unwrap(),
                ),
            };

            let mut args = BTreeMap::new();
            args.insert("ckpt".into(), ckpt.display().to_string());
            args.insert("stream".into(), if stream == Stream::Raw { "raw" } else { "privileged" }.into());
            args.insert("episodes".into(), episodes.to_string());
            write_manifest(&out, "eval", &args, &cfg)?;

            let report = evaluate(
                &env_cfg,
                wm,
                policy,
                &full_suite,
                cfg.usize("eval.workers")?,
            )?;
            let csv_path = out.join("eval.csv");
            std::fs::write(&csv_path, report.to_csv())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            println!(
                "eval: mean DS {:.2}, success {}/{}",
                report.mean_driving_score(),
                report.success_count(),
                report.rows.len()
            );
            println!("csv: {}", csv_path.display());
            Ok(EXIT_OK)
        }
        Command::GradCheck { seed, module } => {
            let reports =
                crate::gradcheck::run_all(seed).map_err(|e| CliError::Runtime(e.to_string()))?;
            let filter: Box<dyn Fn(&str) -> bool> = match module.as_str() {
                "all" => Box::new(|_| true),
                "wm" => Box::new(|n: &str| n.starts_with("wm_")),
                "guidance" => Box::new(|n: &str| n == "rollout_guidance"),
                "policy" => Box::new(|n: &str| matches!(n, "actor" | "critic" | "distill")),
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown module `{other}` (expected wm|guidance|policy|all)"
                    )))
                }
            };
            let mut all_pass = true;
            for r in reports.iter().filter(|r| filter(&r.name)) {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{status} {:<18} params={:<5} max_rel_err={:.3e}",
                    r.name, r.params, r.max_rel_err
                );
                all_pass &= r.passed();
            }
            Ok(if all_pass { EXIT_OK } else { EXIT_RUNTIME })
        }
        Command::DumpRollout {
            ckpt,
            seed,
            out,
            set,
        } => {
            let probe = Config::default();
            let loaded = match Checkpoint::load(&ckpt, &probe) {
                Ok(c) => c,
                Err(_) => {
                    let text = peek_config_text(&ckpt)?;
                    let cfg = Config::from_text(&text)?;
                    Checkpoint::load(&ckpt, &cfg)?
                }
            };
            let mut cfg = Config::from_text(&loaded.config_text)?;
            apply_sets(&mut cfg, &set)?;
            let mut args = BTreeMap::new();
            args.insert("ckpt".into(), ckpt.display().to_string());
            args.insert("seed".into(), seed.to_string());
            write_manifest(&out, "dump-rollout", &args, &cfg)?;
            let path = dump::dump_rollout(&cfg, &loaded, seed, &out)?;
            println!("rollout trace: {}", path.display());
            Ok(EXIT_OK)
        }
    }
}

/// Read just the embedded config text out of a checkpoint container.
fn peek_config_text(path: &Path) -> Result<String, CliError> {
    let entries = crate::numcore::container::read_file(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    entries
        .iter()
        .find(|e| e.name == "meta.config_text")
        .map(|e| e.array.data().iter().filter(|&&b| b != 0.0).map(|&b| b as u8 as char).collect())
        .ok_or_else(|| CliError::Runtime("checkpoint lacks embedded config".into()))
}
