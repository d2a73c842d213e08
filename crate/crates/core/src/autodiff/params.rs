use std::collections::BTreeMap;

use super::tape::{Gradients, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor};

/// Named trainable tensors, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T: Element> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Default for ParameterSet<T> {
    fn default() -> Self {
        ParameterSet {
            params: BTreeMap::new(),
        }
    }
}

impl<T: Element> ParameterSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; names must be unique and values finite.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(contract("ParameterSet::insert", format!("parameter {name} is not finite")));
        }
        if self.params.contains_key(&name) {
            return Err(contract("ParameterSet::insert", format!("duplicate parameter {name}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &Tape<T>) -> BoundParams<T> {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Exposes the parameters as constants (no gradient tracking).
    pub fn bind_constant(&self, tape: &Tape<T>) -> BoundParams<T> {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }

    /// `self += factor * other`, parameter by parameter.
    pub fn add_scaled(&mut self, other: &ParameterSet<T>, factor: T) {
        for (name, value) in self.params.iter_mut() {
            if let Some(o) = other.params.get(name) {
                for (a, &b) in value.data_mut().iter_mut().zip(o.data()) {
                    *a = *a + factor * b;
                }
            }
        }
    }

    /// Flattens all parameters (name order) into one f64 vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .values()
            .flat_map(|t| t.data().iter().map(|v| v.as_f64()))
            .collect()
    }

    pub fn cast<U: Element>(&self) -> ParameterSet<U> {
        ParameterSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// Parameters placed on a tape for one forward pass.
pub struct BoundParams<T: Element> {
    vars: BTreeMap<String, Var<T>>,
}

impl<T: Element> BoundParams<T> {
    pub fn var(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| contract("BoundParams::var", format!("no parameter named {name}")))
    }

    /// Gathers the leaf gradients into a parameter-shaped set.
    pub fn gradients(&self, grads: &Gradients<T>) -> ParameterSet<T> {
        ParameterSet {
            params: self
                .vars
                .iter()
                .map(|(k, v)| (k.clone(), grads.wrt(v)))
                .collect(),
        }
    }
}
