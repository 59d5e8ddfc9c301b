use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};
use crate::scalar::Scalar;

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Inserts or replaces `name`, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some((_, t)) => *t = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<S>> {
        self.get(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn size(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Records every parameter as a named leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<S>) -> BoundParams {
        let ids = self.entries.iter().map(|(n, t)| (n.clone(), tape.param(n.clone(), t.clone()))).collect();
        BoundParams { ids }
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }
}

/// Tape node ids of parameters recorded by [`ParamStore::bind`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids.get(name).copied().ok_or_else(|| Error::Config(format!("parameter `{name}` not bound")))
    }
}
