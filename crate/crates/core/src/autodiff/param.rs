use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named parameters of a model, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        ensure!(!self.params.contains_key(&name), "duplicate parameter name `{name}`");
        self.params.insert(name.clone(), Parameter { name, tensor, trainable });
        Ok(())
    }

    /// Gaussian init with standard deviation `1/sqrt(fan_in)`.
    pub fn insert_randn(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape, |_| normal.sample(rng));
        self.insert(name, t, true)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape), true)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        &self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"))
            .tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.values_mut()
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

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.tensor.len()).sum()
    }

    /// Mark each parameter trainable iff `pred(name)` holds.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for p in self.params.values_mut() {
            p.trainable = pred(&p.name);
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params.values().filter(|p| p.trainable).map(|p| p.name.clone()).collect()
    }

    /// Merge every parameter of `other`; names must not collide.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (_, p) in other.params {
            self.insert(p.name, p.tensor, p.trainable)?;
        }
        Ok(())
    }

    /// Byte images of each parameter, for freezing checks.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<u8>> {
        self.params.iter().map(|(k, p)| (k.clone(), p.tensor.to_le_bytes())).collect()
    }

    /// Names whose bytes differ from an earlier [`snapshot`](Self::snapshot).
    pub fn changed_since(&self, before: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
        self.params
            .iter()
            .filter(|(k, p)| before.get(*k).is_none_or(|b| *b != p.tensor.to_le_bytes()))
            .map(|(k, _)| k.clone())
            .collect()
    }
}
