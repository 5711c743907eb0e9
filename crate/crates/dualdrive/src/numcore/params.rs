//! Named, ordered collections of trainable arrays.

use std::collections::HashMap;

use super::array::{Array, NumError};
use super::rng::Rng;
use super::tape::{Gradients, Tape, Var};

/// Ordered name -> array map. Order is fixed at insertion and determines
/// optimizer-state alignment and checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    arrays: Vec<Array>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, mut array: Array) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        array.requires_grad = true;
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.arrays.push(array);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> &Array {
        &self.arrays[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array {
        &mut self.arrays[self.index[name]]
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(|n| n.as_str()).zip(self.arrays.iter())
    }

    /// Linear layer init: weight scaled by 1/sqrt(fan_in), zero bias.
    pub fn insert_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.normal() * scale).collect();
        self.insert(
            &format!("{prefix}.w"),
            Array::from_vec(vec![fan_in, fan_out], data).unwrap(),
        );
        self.insert(&format!("{prefix}.b"), Array::zeros(vec![fan_out]));
    }

    /// Bind every parameter onto a tape. With `trainable` false the arrays
    /// enter as constants and receive no gradients.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundParams {
        let vars = self
            .arrays
            .iter()
            .map(|a| {
                if trainable {
                    tape.leaf(a)
                } else {
                    let mut c = a.clone();
                    c.requires_grad = false;
                    tape.constant(c)
                }
            })
            .collect();
        BoundParams {
            index: self.index.clone(),
            vars,
        }
    }

    /// Collect gradients aligned with parameter order.
    pub fn grads(&self, bound: &BoundParams, grads: &Gradients) -> Vec<Array> {
        self.names
            .iter()
            .map(|n| grads.wrt(bound.var(n)))
            .collect()
    }

    /// Copy values from another set with identical layout.
    pub fn copy_from(&mut self, other: &ParameterSet) -> Result<(), NumError> {
        if self.names != other.names {
            return Err(NumError::InvalidArgument(format!(
                "parameter set layout mismatch: {} vs {} entries",
                self.names.len(),
                other.names.len()
            )));
        }
        for (dst, src) in self.arrays.iter_mut().zip(other.arrays.iter()) {
            if dst.shape() != src.shape() {
                return Err(NumError::ShapeMismatch {
                    expected: dst.shape().to_vec(),
                    got: src.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Tape bindings for one forward pass.
pub struct BoundParams {
    index: HashMap<String, usize>,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
