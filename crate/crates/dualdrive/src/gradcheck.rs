//! Finite-difference gradient oracles for every training loss.
//!
//! Each case builds a small randomized instance (well under 2,000
//! parameters), computes analytic gradients through the tape, and compares
//! every coordinate against central differences with a 1e-5 step. Sampling
//! inside the losses uses a fixed stream per evaluation (common random
//! numbers), so the finite-difference quotient measures the same path the
//! tape differentiated.

use crate::microdrive::{PrivilegedObs, RawObs, NUM_ACTIONS};
use crate::numcore::{Array, NumError, ParameterSet, Rng, Tape};
use crate::policy::{actor_loss, critic_loss, distill_loss, PolicyParams};
use crate::worldmodel::{
    wm_loss, LatentSampling, ModelConfig, SequenceBatch, Stream, WmLossWeights, WorldModel,
};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub params: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

fn tiny_model_cfg() -> ModelConfig {
    ModelConfig {
        obs_size: 4,
        priv_channels: 2,
        grid_side: 2,
        feat: 3,
        det_dim: 6,
        groups: 2,
        classes: 3,
        hidden: 6,
        dec_feat: 3,
        unimix: 0.01,
    }
}

// Coordinates with gradients below this floor are held to an absolute
// tolerance of FLOOR * TOLERANCE; central differences on a summed loss
// cannot resolve relative error below fd roundoff.
const DENOM_FLOOR: f64 = 1e-4;

fn synthetic_batch(cfg: &ModelConfig, b: usize, t: usize, rng: &mut Rng) -> SequenceBatch {
    let mask_len = cfg.mask_len();
    let raw_len = cfg.obs_size * cfg.obs_size;
    let mut priv_obs = Vec::new();
    let mut raw_obs = Vec::new();
    for _ in 0..b * t {
        priv_obs.push(PrivilegedObs {
            size: cfg.obs_size,
            mask: (0..mask_len).map(|_| (rng.uniform() < 0.3) as u8 as f64).collect(),
            ego_vector: [
                rng.uniform_in(0.0, 8.0),
                rng.uniform(),
                0.0,
                rng.uniform_in(-1.0, 1.0),
                0.0,
            ],
        });
        raw_obs.push(RawObs {
            size: cfg.obs_size,
            pixels: (0..raw_len).map(|_| rng.uniform()).collect(),
            ego_vector: [
                rng.uniform_in(0.0, 8.0),
                rng.uniform(),
                0.0,
                rng.uniform_in(-1.0, 1.0),
                0.0,
            ],
        });
    }
    SequenceBatch {
        batch: b,
        seq_len: t,
        priv_obs,
        raw_obs: Some(raw_obs),
        actions: (0..b * t).map(|_| rng.index(NUM_ACTIONS)).collect(),
        first_prev_action: (0..b).map(|_| Some(rng.index(NUM_ACTIONS))).collect(),
        rewards: (0..b * t).map(|_| rng.normal()).collect(),
        continues: (0..b * t).map(|_| (rng.uniform() < 0.9) as u8 as f64).collect(),
    }
}

/// Spread the stochastic-state logits so KL terms sit above the free-bits
/// floor and actually carry gradient.
fn sharpen(wm: &mut WorldModel, posterior_factor: f64, prior_factor: f64) {
    for name in ["mlp.l1.w", "mlp.l1.b"] {
        for v in wm.params.posterior.get_mut(name).data_mut() {
            *v *= posterior_factor;
        }
        for v in wm.params.prior.get_mut(name).data_mut() {
            *v *= prior_factor;
        }
    }
}

type SetRef<'a> = (&'a str, Vec<String>);

/// Compare analytic gradients against central differences for every
/// coordinate of the listed parameter sets.
fn check_case<FV, FG>(
    name: &str,
    sets: &mut [(&mut ParameterSet, SetRef)],
    value_of: FV,
    analytic: FG,
) -> GradCheckReport
where
    FV: Fn(&[&ParameterSet]) -> f64,
    FG: Fn(&[&ParameterSet]) -> Vec<Vec<Array>>,
{
    let refs: Vec<&ParameterSet> = sets.iter().map(|(ps, _)| &**ps).collect();
    let grads = analytic(&refs);
    drop(refs);
    let mut max_rel = 0.0f64;
    let mut max_abs_grad = 0.0f64;
    let mut total_params = 0usize;
    for si in 0..sets.len() {
        let param_names: Vec<String> = sets[si].1 .1.clone();
        for (pi, pname) in param_names.iter().enumerate() {
            let n = sets[si].0.get(pname).len();
            total_params += n;
            for k in 0..n {
                let orig = sets[si].0.get(pname).data()[k];
                sets[si].0.get_mut(pname).data_mut()[k] = orig + FD_STEP;
                let plus = {
                    let refs: Vec<&ParameterSet> = sets.iter().map(|(ps, _)| &**ps).collect();
                    value_of(&refs)
                };
                sets[si].0.get_mut(pname).data_mut()[k] = orig - FD_STEP;
                let minus = {
                    let refs: Vec<&ParameterSet> = sets.iter().map(|(ps, _)| &**ps).collect();
                    value_of(&refs)
                };
                sets[si].0.get_mut(pname).data_mut()[k] = orig;
                let fd = (plus - minus) / (2.0 * FD_STEP);
                let an = grads[si][pi].data()[k];
                max_abs_grad = max_abs_grad.max(an.abs());
                let denom = an.abs().max(fd.abs()).max(DENOM_FLOOR);
                max_rel = max_rel.max((an - fd).abs() / denom);
            }
        }
    }
    GradCheckReport {
        name: name.to_string(),
        params: total_params,
        max_rel_err: max_rel,
        max_abs_grad,
    }
}

/// `components = None` checks every parameter set. The KL terms restrict
/// to the set their stop-gradient leaves differentiable end-to-end
/// (perturbing shared upstream weights moves the stopped branch too, which
/// finite differences see but the defined gradient deliberately ignores).
fn wm_case(
    name: &str,
    weights: WmLossWeights,
    components: Option<&[&str]>,
    seed: u64,
) -> Result<GradCheckReport, NumError> {
    let cfg = tiny_model_cfg();
    let mut rng = Rng::new(seed);
    let mut wm = WorldModel::new(cfg.clone(), Stream::Privileged, false, &mut rng);
    sharpen(&mut wm, 40.0, 2.0);
    let batch = synthetic_batch(&cfg, 2, 3, &mut rng);
    let sample_seed = rng.next_u64();

    let compute = |wm: &WorldModel, want_grads: bool| -> (f64, Vec<Vec<Array>>) {
        let tape = Tape::new();
        let bound = wm.bind(&tape, true);
        let mut loss_rng = Rng::new(sample_seed);
        let (loss, _) = wm_loss(
            &tape,
            wm,
            &bound,
            &batch,
            &weights,
            LatentSampling::Expected,
            &mut loss_rng,
        )
        .expect("wm loss evaluates");
        let value = tape.item(loss.total);
        if !want_grads {
            return (value, Vec::new());
        }
        let grads = tape.backward(loss.total).expect("backward");
        let comps = wm.params.components();
        let mut out = Vec::new();
        for (cname, ps) in comps {
            let bp = bound.component(cname).unwrap();
            out.push(ps.names().iter().map(|n| grads.wrt(bp.var(n))).collect());
        }
        (value, out)
    };

    // Apply perturbations through a cloned model so the closure signature
    // stays uniform with the parameter-set list.
    let comp_names: Vec<(String, Vec<String>)> = wm
        .params
        .components()
        .iter()
        .filter(|(n, _)| components.map_or(true, |list| list.contains(n)))
        .map(|(n, ps)| (n.to_string(), ps.names().to_vec()))
        .collect();
    let mut report = GradCheckReport {
        name: name.to_string(),
        params: 0,
        max_rel_err: 0.0,
        max_abs_grad: 0.0,
    };
    let (_, analytic) = compute(&wm, true);
    let full_index: Vec<String> = wm
        .params
        .components()
        .iter()
        .map(|(n, _)| n.to_string())
        .collect();
    for (cname, pnames) in comp_names.iter() {
        let ci = full_index.iter().position(|c| c == cname).unwrap();
        for (pi, pname) in pnames.iter().enumerate() {
            let n = {
                let (_, ps) = wm
                    .params
                    .components()
                    .into_iter()
                    .find(|(c, _)| c == cname)
                    .unwrap();
                ps.get(pname).len()
            };
            report.params += n;
            for k in 0..n {
                let orig = {
                    let (_, ps) = wm
                        .params
                        .components_mut()
                        .into_iter()
                        .find(|(c, _)| c == cname)
                        .unwrap();
                    let v = ps.get(pname).data()[k];
                    ps.get_mut(pname).data_mut()[k] = v + FD_STEP;
                    v
                };
                let plus = compute(&wm, false).0;
                {
                    let (_, ps) = wm
                        .params
                        .components_mut()
                        .into_iter()
                        .find(|(c, _)| c == cname)
                        .unwrap();
                    ps.get_mut(pname).data_mut()[k] = orig - FD_STEP;
                }
                let minus = compute(&wm, false).0;
                {
                    let (_, ps) = wm
                        .params
                        .components_mut()
                        .into_iter()
                        .find(|(c, _)| c == cname)
                        .unwrap();
                    ps.get_mut(pname).data_mut()[k] = orig;
                }
                let fd = (plus - minus) / (2.0 * FD_STEP);
                let an = analytic[ci][pi].data()[k];
                report.max_abs_grad = report.max_abs_grad.max(an.abs());
                let denom = an.abs().max(fd.abs()).max(DENOM_FLOOR);
                report.max_rel_err = report.max_rel_err.max((an - fd).abs() / denom);
            }
        }
    }
    Ok(report)
}

/// Representation-loss oracle on fixed (h, e): the full-unroll variant is
/// contaminated for finite differences because the expected stochastic
/// state carries posterior perturbations into later steps' stopped priors.
fn rep_case(seed: u64) -> Result<GradCheckReport, NumError> {
    let cfg = tiny_model_cfg();
    let mut rng = Rng::new(seed);
    let mut wm = WorldModel::new(cfg.clone(), Stream::Privileged, false, &mut rng);
    sharpen(&mut wm, 40.0, 2.0);
    let b = 6;
    let h = Array::from_vec(
        vec![b, cfg.det_dim],
        (0..b * cfg.det_dim).map(|_| rng.normal()).collect(),
    )
    .unwrap();
    let e = Array::from_vec(
        vec![b, cfg.encoder_dim()],
        (0..b * cfg.encoder_dim()).map(|_| rng.normal()).collect(),
    )
    .unwrap();

    let compute = |wm: &WorldModel, want_grads: bool| -> (f64, Vec<Array>) {
        let tape = Tape::new();
        let bound = wm.bind(&tape, true);
        let hv = tape.constant(h.clone());
        let ev = tape.constant(e.clone());
        let q = wm.posterior_logits(&tape, &bound, hv, ev);
        let p = wm.prior_logits(&tape, &bound, hv);
        let p_sg = tape.stop_grad(p);
        let grouped = crate::numcore::dist::kl_categorical_grouped(
            &tape, q, p_sg, cfg.classes, cfg.unimix,
        )
        .unwrap();
        let per_sample = tape.sum_rows(grouped);
        let loss = tape.mean(tape.clamp_min(per_sample, 1.0));
        let v = tape.item(loss);
        if !want_grads {
            return (v, Vec::new());
        }
        let grads = tape.backward(loss).unwrap();
        (
            v,
            wm.params
                .posterior
                .names()
                .iter()
                .map(|n| grads.wrt(bound.posterior.var(n)))
                .collect(),
        )
    };

    let (_, analytic) = compute(&wm, true);
    let mut report = GradCheckReport {
        name: "wm_rep".to_string(),
        params: 0,
        max_rel_err: 0.0,
        max_abs_grad: 0.0,
    };
    let names: Vec<String> = wm.params.posterior.names().to_vec();
    for (pi, pname) in names.iter().enumerate() {
        let n = wm.params.posterior.get(pname).len();
        report.params += n;
        for k in 0..n {
            let orig = wm.params.posterior.get(pname).data()[k];
            wm.params.posterior.get_mut(pname).data_mut()[k] = orig + FD_STEP;
            let plus = compute(&wm, false).0;
            wm.params.posterior.get_mut(pname).data_mut()[k] = orig - FD_STEP;
            let minus = compute(&wm, false).0;
            wm.params.posterior.get_mut(pname).data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let an = analytic[pi].data()[k];
            report.max_abs_grad = report.max_abs_grad.max(an.abs());
            let denom = an.abs().max(fd.abs()).max(DENOM_FLOOR);
            report.max_rel_err = report.max_rel_err.max((an - fd).abs() / denom);
        }
    }
    Ok(report)
}

fn guidance_case(seed: u64) -> Result<GradCheckReport, NumError> {
    let cfg = tiny_model_cfg();
    let mut rng = Rng::new(seed);
    let priv_wm = WorldModel::new(cfg.clone(), Stream::Privileged, false, &mut rng);
    let mut raw_wm = WorldModel::new(cfg.clone(), Stream::Raw, false, &mut rng);
    sharpen(&mut raw_wm, 24.0, 3.0);
    let batch = synthetic_batch(&cfg, 2, 3, &mut rng);
    let sample_seed = rng.next_u64();
    // World-model terms silenced: only the rollout-guidance loss remains.
    let weights = WmLossWeights {
        pred: 0.0,
        dynamics: 0.0,
        representation: 0.0,
    };
    let gw = crate::guidance::GuidanceWeights::default();

    let compute = |raw: &WorldModel, want_grads: bool| -> (f64, Vec<Vec<Array>>) {
        let tape = Tape::new();
        let raw_bound = raw.bind(&tape, true);
        let priv_bound = priv_wm.bind(&tape, false);
        let mut loss_rng = Rng::new(sample_seed);
        let out = crate::guidance::paired_wm_loss(
            &tape,
            raw,
            &raw_bound,
            &priv_wm,
            &priv_bound,
            &batch,
            &weights,
            &gw,
            false,
            LatentSampling::Expected,
            &mut loss_rng,
        )
        .expect("paired loss evaluates");
        let value = tape.item(out.total);
        if !want_grads {
            return (value, Vec::new());
        }
        let grads = tape.backward(out.total).expect("backward");
        let mut result = Vec::new();
        for (cname, ps) in raw.params.components() {
            let bp = raw_bound.component(cname).unwrap();
            result.push(ps.names().iter().map(|n| grads.wrt(bp.var(n))).collect());
        }
        (value, result)
    };

    let comp_names: Vec<(String, Vec<String>)> = raw_wm
        .params
        .components()
        .iter()
        .map(|(n, ps)| (n.to_string(), ps.names().to_vec()))
        .collect();
    let mut report = GradCheckReport {
        name: "rollout_guidance".to_string(),
        params: 0,
        max_rel_err: 0.0,
        max_abs_grad: 0.0,
    };
    let (_, analytic) = compute(&raw_wm, true);
    for (ci, (cname, pnames)) in comp_names.iter().enumerate() {
        for (pi, pname) in pnames.iter().enumerate() {
            let n = {
                let (_, ps) = raw_wm
                    .params
                    .components()
                    .into_iter()
                    .find(|(c, _)| c == cname)
                    .unwrap();
                ps.get(pname).len()
            };
            report.params += n;
            for k in 0..n {
                let set = |raw_wm: &mut WorldModel, val: f64| {
                    let (_, ps) = raw_wm
                        .params
                        .components_mut()
                        .into_iter()
                        .find(|(c, _)| c == cname)
                        .unwrap();
                    ps.get_mut(pname).data_mut()[k] = val;
                };
                let orig = {
                    let (_, ps) = raw_wm
                        .params
                        .components()
                        .into_iter()
                        .find(|(c, _)| c == cname)
                        .unwrap();
                    ps.get(pname).data()[k]
                };
                set(&mut raw_wm, orig + FD_STEP);
                let plus = compute(&raw_wm, false).0;
                set(&mut raw_wm, orig - FD_STEP);
                let minus = compute(&raw_wm, false).0;
                set(&mut raw_wm, orig);
                let fd = (plus - minus) / (2.0 * FD_STEP);
                let an = analytic[ci][pi].data()[k];
                report.max_abs_grad = report.max_abs_grad.max(an.abs());
                let denom = an.abs().max(fd.abs()).max(DENOM_FLOOR);
                report.max_rel_err = report.max_rel_err.max((an - fd).abs() / denom);
            }
        }
    }
    Ok(report)
}

fn policy_cases(seed: u64) -> Result<Vec<GradCheckReport>, NumError> {
    let mut rng = Rng::new(seed);
    let latent_dim = 9;
    let n = 6;
    let mut policy = PolicyParams::new(latent_dim, 7, &mut rng);
    let latents = Array::from_vec(
        vec![n, latent_dim],
        (0..n * latent_dim).map(|_| rng.normal()).collect(),
    )
    .unwrap();
    let taken: Vec<usize> = (0..n).map(|_| rng.index(NUM_ACTIONS)).collect();
    let advantages: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let teacher =
        Array::from_vec(vec![n, NUM_ACTIONS], (0..n * NUM_ACTIONS).map(|_| rng.normal()).collect())
            .unwrap();

    let mut reports = Vec::new();

    // Actor loss over actor parameters.
    {
        let latents = latents.clone();
        let taken = taken.clone();
        let value_of = |sets: &[&ParameterSet]| -> f64 {
            let mut p = policy_shell(sets[0], &policy.critic);
            let tape = Tape::new();
            let bound = p.bind(&tape, true);
            let logits = p.actor_logits(&tape, &bound, tape.constant(latents.clone()));
            let loss = actor_loss(&tape, logits, &taken, &advantages, 3e-2).unwrap();
            let v = tape.item(loss);
            p.return_scale = 0.0;
            v
        };
        let analytic = |sets: &[&ParameterSet]| -> Vec<Vec<Array>> {
            let p = policy_shell(sets[0], &policy.critic);
            let tape = Tape::new();
            let bound = p.bind(&tape, true);
            let logits = p.actor_logits(&tape, &bound, tape.constant(latents.clone()));
            let loss = actor_loss(&tape, logits, &taken, &advantages, 3e-2).unwrap();
            let grads = tape.backward(loss).unwrap();
            vec![p.actor.names().iter().map(|n| grads.wrt(bound.actor.var(n))).collect()]
        };
        let mut actor = policy.actor.clone();
        let names = ("actor", actor.names().to_vec());
        reports.push(check_case(
            "actor",
            &mut [(&mut actor, names)],
            value_of,
            analytic,
        ));
    }

    // Critic loss over critic parameters.
    {
        let latents = latents.clone();
        let targets = targets.clone();
        let value_of = |sets: &[&ParameterSet]| -> f64 {
            let p = policy_shell(&policy.actor, sets[0]);
            let tape = Tape::new();
            let bound = p.bind(&tape, true);
            let values = p.critic_values(&tape, &bound, tape.constant(latents.clone()));
            let t = tape.constant(Array::from_vec(vec![n, 1], targets.clone()).unwrap());
            tape.item(critic_loss(&tape, values, t))
        };
        let analytic = |sets: &[&ParameterSet]| -> Vec<Vec<Array>> {
            let p = policy_shell(&policy.actor, sets[0]);
            let tape = Tape::new();
            let bound = p.bind(&tape, true);
            let values = p.critic_values(&tape, &bound, tape.constant(latents.clone()));
            let t = tape.constant(Array::from_vec(vec![n, 1], targets.clone()).unwrap());
            let loss = critic_loss(&tape, values, t);
            let grads = tape.backward(loss).unwrap();
            vec![p.critic.names().iter().map(|nm| grads.wrt(bound.critic.var(nm))).collect()]
        };
        let mut critic = policy.critic.clone();
        let names = ("critic", critic.names().to_vec());
        reports.push(check_case(
            "critic",
            &mut [(&mut critic, names)],
            value_of,
            analytic,
        ));
    }

    // Distillation loss over student actor parameters.
    {
        let latents = latents.clone();
        let value_of = |sets: &[&ParameterSet]| -> f64 {
            let p = policy_shell(sets[0], &policy.critic);
            let tape = Tape::new();
            let bound = p.bind(&tape, true);
            let student = p.actor_logits(&tape, &bound, tape.constant(latents.clone()));
            let t = tape.constant(teacher.clone());
            tape.item(distill_loss(&tape, t, student).unwrap())
        };
        let analytic = |sets: &[&ParameterSet]| -> Vec<Vec<Array>> {
            let p = policy_shell(sets[0], &policy.critic);
            let tape = Tape::new();
            let bound = p.bind(&tape, true);
            let student = p.actor_logits(&tape, &bound, tape.constant(latents.clone()));
            let t = tape.constant(teacher.clone());
            let loss = distill_loss(&tape, t, student).unwrap();
            let grads = tape.backward(loss).unwrap();
            vec![p.actor.names().iter().map(|nm| grads.wrt(bound.actor.var(nm))).collect()]
        };
        let mut actor = policy.actor.clone();
        let names = ("actor", actor.names().to_vec());
        reports.push(check_case(
            "distill",
            &mut [(&mut actor, names)],
            value_of,
            analytic,
        ));
    }

    policy.return_scale = 0.0;
    Ok(reports)
}

fn policy_shell(actor: &ParameterSet, critic: &ParameterSet) -> PolicyParams {
    PolicyParams {
        actor: actor.clone(),
        critic: critic.clone(),
        return_scale: 0.0,
    }
}

/// Run every oracle; seven reports, one per loss.
pub fn run_all(seed: u64) -> Result<Vec<GradCheckReport>, NumError> {
    let mut reports = Vec::new();
    reports.push(wm_case(
        "wm_pred",
        WmLossWeights {
            pred: 1.0,
            dynamics: 0.0,
            representation: 0.0,
        },
        None,
        seed ^ 0x11,
    )?);
    reports.push(wm_case(
        "wm_dyn",
        WmLossWeights {
            pred: 0.0,
            dynamics: 1.0,
            representation: 0.0,
        },
        Some(&["prior"]),
        seed ^ 0x22,
    )?);
    reports.push(rep_case(seed ^ 0x33)?);
    reports.push(guidance_case(seed ^ 0x44)?);
    reports.extend(policy_cases(seed ^ 0x55)?);
    Ok(reports)
}
