//! Named parameter tensors and their binding onto a [`Graph`].

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Graph, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor {
            shape: shape.to_vec(),
            data: (0..shape.iter().product()).map(|_| dist.sample(rng)).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = tensor,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(tensor);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Entries whose name starts with `prefix`, in order.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (n, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(n, t.clone());
        }
        out
    }

    /// Appends every entry of `other`, replacing same-named ones.
    pub fn extend(&mut self, other: &ParamStore) {
        for (n, t) in other.iter() {
            self.insert(n, t.clone());
        }
    }

    /// True when both stores have the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape)
    }

    /// Places every tensor on the graph as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Bound<'_>> {
        let vars = self
            .tensors
            .iter()
            .map(|t| g.leaf(&t.shape, t.data.clone(), trainable))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { store: self, vars })
    }
}

/// Graph handles for the tensors of a [`ParamStore`].
#[derive(Debug)]
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.store
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of every bound tensor after a backward pass, zeros where
    /// none arrived.
    pub fn grads(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.vars.iter().map(|&v| g.grad_or_zeros(v)).collect()
    }
}
