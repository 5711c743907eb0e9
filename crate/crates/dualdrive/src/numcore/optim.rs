//! Adam with decoupled weight decay.

use super::array::{Array, NumError};
use super::params::ParameterSet;

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Array>,
    pub second_moment: Vec<Array>,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: params
                .arrays()
                .iter()
                .map(|a| Array::zeros(a.shape().to_vec()))
                .collect(),
            second_moment: params
                .arrays()
                .iter()
                .map(|a| Array::zeros(a.shape().to_vec()))
                .collect(),
        }
    }

    /// One decoupled-weight-decay Adam update. `grads` must align with the
    /// parameter order; the step counter advances by exactly one.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &[Array]) -> Result<(), NumError> {
        if grads.len() != params.len() {
            return Err(NumError::InvalidArgument(format!(
                "gradient count {} vs parameter count {}",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.arrays().iter().zip(grads.iter()) {
            if p.shape() != g.shape() {
                return Err(NumError::ShapeMismatch {
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let lr = self.learning_rate;
        for ((p, g), (m, v)) in params
            .arrays_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data().iter())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *pv);
            }
        }
        Ok(())
    }
}
