use std::collections::BTreeMap;

use super::{DenoiserError, Result};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

/// Named parameter tensors, each a gradient-tracking leaf.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tracked copy of `value`.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value.requires_grad());
    }

    /// `N(0, std^2)` entries.
    pub fn insert_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut RandomSource) {
        let n = shape.iter().product();
        let data = rng.normals(n).into_iter().map(|v| v * std).collect();
        self.insert(name, Tensor::new(shape, data).expect("finite normal draws"));
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| DenoiserError::Invalid(format!("missing parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.tensors.values().for_each(Tensor::zero_grad);
    }

    /// Replaces the values of `name` (same shape) with a fresh tracked leaf.
    pub fn set_data(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let old = self.get(name)?;
        let t = Tensor::new(old.shape(), data)?;
        self.insert(name.to_string(), t);
        Ok(())
    }

    /// Copies every parameter with zero values; handy for degenerate nets.
    pub fn zeroed(&self) -> Self {
        let mut out = Self::new();
        for (k, v) in &self.tensors {
            out.insert_zeros(k, v.shape());
        }
        out
    }

    /// Builds a store from untracked tensors.
    pub fn from_tensors(items: impl IntoIterator<Item = (String, Tensor)>) -> Self {
        let mut out = Self::new();
        for (k, v) in items {
            out.insert(k, v);
        }
        out
    }
}

/// Plain gradient descent with a fixed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    /// Gradients are rescaled so their global norm is at most this value.
    pub clip_norm: Option<f64>,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr, clip_norm: None }
    }

    /// Applies one step from the gradients currently accumulated in
    /// `params`. Parameters without a gradient are left as they are.
    pub fn step(&self, params: &mut ParamStore) -> Result<()> {
        let grads: Vec<(String, Vec<f64>)> = params
            .tensors
            .iter()
            .filter_map(|(k, t)| t.grad().map(|g| (k.clone(), g)))
            .collect();
        if grads.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(DenoiserError::NonFiniteLoss);
        }
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let factor = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let mut updated = Vec::with_capacity(grads.len());
        for (name, g) in &grads {
            let t = &params.tensors[name];
            let data: Vec<f64> = t
                .data()
                .iter()
                .zip(g)
                .map(|(w, g)| w - self.lr * factor * g)
                .collect();
            updated.push((name.clone(), Tensor::new(t.shape(), data)?));
        }
        for (name, t) in updated {
            params.insert(name, t);
        }
        Ok(())
    }
}
