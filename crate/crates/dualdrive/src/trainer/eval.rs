//! Greedy closed-loop evaluation over a fixed scenario x seed suite.

use crate::microdrive::{score_route, Env, EnvConfig, Scenario};
use crate::numcore::Rng;
use crate::policy::{ActMode, PolicyParams};
use crate::worldmodel::{Stream, WorldModel};

use super::filter::LatentFilter;
use super::TrainError;

#[derive(Clone, Debug)]
pub struct EvalRow {
    pub scenario: Scenario,
    pub seed: u64,
    pub route_completion: f64,
    pub infraction_score: f64,
    pub driving_score: f64,
    pub success: bool,
    pub steps: usize,
    pub privileged_renders: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn success_count(&self) -> usize {
        self.rows.iter().filter(|r| r.success).count()
    }

    pub fn mean_driving_score(&self) -> f64 {
        self.rows.iter().map(|r| r.driving_score).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_route_completion(&self) -> f64 {
        self.rows.iter().map(|r| r.route_completion).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,seed,rc,is,ds,success\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{}\n",
                r.scenario.name(),
                r.seed,
                r.route_completion,
                r.infraction_score,
                r.driving_score,
                r.success as u8
            ));
        }
        out.push_str(&format!(
            "aggregate,,{:.6},,{:.6},{}\n",
            self.mean_route_completion(),
            self.mean_driving_score(),
            self.success_count()
        ));
        out
    }
}

fn eval_one(
    env_cfg: &EnvConfig,
    wm: &WorldModel,
    policy: &PolicyParams,
    scenario: Scenario,
    seed: u64,
) -> Result<EvalRow, TrainError> {
    let mut env = Env::reset(env_cfg.clone(), seed, scenario);
    let mut filter = LatentFilter::new(wm);
    // Posterior sampling stream fixed by episode identity so parallel
    // workers and reruns agree bit for bit.
    let mut rng = Rng::new(0xE7A1_5EED ^ seed).split(scenario as u64 + 1);
    let mut steps = 0;
    while !env.terminated() {
        let latent = match wm.stream {
            Stream::Privileged => {
                let obs = env.render_privileged();
                filter.observe_priv(&obs, &mut rng)?
            }
            Stream::Raw => {
                let obs = env.render_raw();
                filter.observe_raw(&obs, &mut rng)?
            }
        };
        let action = policy.act(&latent, ActMode::Greedy, &mut rng);
        env.step(action)?;
        filter.note_action(action);
        steps += 1;
    }
    let score = score_route(&env.state.infractions, env.state.progress);
    Ok(EvalRow {
        scenario,
        seed,
        route_completion: score.route_completion,
        infraction_score: score.infraction_score,
        driving_score: score.driving_score,
        success: score.success,
        steps,
        privileged_renders: env.privileged_render_count(),
    })
}

/// Run every (scenario, seed) episode greedily; rows come back sorted by
/// (scenario, seed) regardless of worker count.
pub fn evaluate(
    env_cfg: &EnvConfig,
    wm: &WorldModel,
    policy: &PolicyParams,
    suite: &[(Scenario, u64)],
    workers: usize,
) -> Result<EvalReport, TrainError> {
    let mut rows: Vec<EvalRow> = if workers <= 1 || suite.len() <= 1 {
        suite
            .iter()
            .map(|&(sc, seed)| eval_one(env_cfg, wm, policy, sc, seed))
            .collect::<Result<_, _>>()?
    } else {
        let chunk = suite.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = suite
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|&(sc, seed)| eval_one(env_cfg, wm, policy, sc, seed))
                            .collect::<Result<Vec<_>, _>>()
                    })
                })
                .collect();
            let mut all = Vec::new();
            for h in handles {
                all.extend(h.join().expect("eval worker panicked")?);
            }
            Ok::<_, TrainError>(all)
        })?
    };
    rows.sort_by_key(|r| (r.scenario.name(), r.seed));
    Ok(EvalReport { rows })
}

/// The fixed default suite: one scenario, `episodes` consecutive seeds.
pub fn default_suite(scenario: Scenario, seed_base: u64, episodes: usize) -> Vec<(Scenario, u64)> {
    (0..episodes as u64).map(|i| (scenario, seed_base + i)).collect()
}
