//! Gradient application shared by the two training stages: collect per-set
//! gradients, clip by global norm, and step the matching optimizers.

use crate::numcore::{Array, Gradients, OptimizerState, Tape, Var};
use crate::policy::PolicyParams;
use crate::worldmodel::{BoundWm, WorldModel};

use super::TrainError;

pub type OptimizerBank = Vec<(String, OptimizerState)>;

pub fn find_opt<'a>(bank: &'a mut OptimizerBank, key: &str) -> &'a mut OptimizerState {
    &mut bank
        .iter_mut()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("optimizer {key} not registered"))
        .1
}

fn global_norm(grads: &[Vec<Array>]) -> f64 {
    grads
        .iter()
        .flat_map(|set| set.iter())
        .flat_map(|a| a.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn scale_grads(grads: &mut [Vec<Array>], scale: f64) {
    for set in grads.iter_mut() {
        for arr in set.iter_mut() {
            for v in arr.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// Apply one world-model update. Components named by `skip` keep their
/// parameters (frozen transfer modes); returns the pre-clip gradient norm.
pub fn apply_wm_grads(
    wm: &mut WorldModel,
    bound: &BoundWm,
    grads: &Gradients,
    bank: &mut OptimizerBank,
    opt_prefix: &str,
    skip: &dyn Fn(&str) -> bool,
    clip: f64,
) -> Result<f64, TrainError> {
    let comps: Vec<(String, Vec<String>)> = wm
        .params
        .components()
        .iter()
        .filter(|(name, _)| !skip(name))
        .map(|(name, ps)| (name.to_string(), ps.names().to_vec()))
        .collect();
    let mut per_set: Vec<Vec<Array>> = Vec::with_capacity(comps.len());
    for (name, param_names) in &comps {
        let bp = bound.component(name).expect("bound component");
        per_set.push(param_names.iter().map(|pn| grads.wrt(bp.var(pn))).collect());
    }
    let norm = global_norm(&per_set);
    if clip > 0.0 && norm > clip {
        scale_grads(&mut per_set, clip / norm);
    }
    for ((name, _), set_grads) in comps.iter().zip(per_set.into_iter()) {
        let key = format!("{opt_prefix}.{name}");
        let (_, ps) = wm
            .params
            .components_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .unwrap();
        find_opt(bank, &key).step(ps, &set_grads)?;
    }
    Ok(norm)
}

/// One actor or critic update from a scalar loss already on the tape.
pub fn apply_policy_grads(
    tape: &Tape,
    loss: Var,
    set: &mut crate::numcore::ParameterSet,
    bound: &crate::numcore::BoundParams,
    bank: &mut OptimizerBank,
    key: &str,
    clip: f64,
) -> Result<f64, TrainError> {
    let grads = tape.backward(loss)?;
    let mut g = vec![set.grads(bound, &grads)];
    let norm = global_norm(&g);
    if clip > 0.0 && norm > clip {
        scale_grads(&mut g, clip / norm);
    }
    find_opt(bank, key).step(set, &g[0])?;
    Ok(norm)
}

/// Register optimizers for every trainable component of a world model.
pub fn register_wm_optimizers(
    bank: &mut OptimizerBank,
    wm: &WorldModel,
    opt_prefix: &str,
    lr: f64,
    weight_decay: f64,
) {
    for (name, ps) in wm.params.components() {
        bank.push((
            format!("{opt_prefix}.{name}"),
            OptimizerState::new(ps, lr, weight_decay),
        ));
    }
}

pub fn register_policy_optimizers(
    bank: &mut OptimizerBank,
    policy: &PolicyParams,
    opt_prefix: &str,
    lr: f64,
    weight_decay: f64,
) {
    bank.push((
        format!("{opt_prefix}.actor"),
        OptimizerState::new(&policy.actor, lr, weight_decay),
    ));
    bank.push((
        format!("{opt_prefix}.critic"),
        OptimizerState::new(&policy.critic, lr, weight_decay),
    ));
}
