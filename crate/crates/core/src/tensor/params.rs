use std::collections::{BTreeMap, HashMap};

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Registry of named trainable tensors, kept in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "param" });
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(self.get(self.id(name)?))
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.tensors[id.0];
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param set",
                lhs: slot.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }
}

/// Gradients keyed by parameter name. A missing entry is an exact zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedGradients {
    entries: BTreeMap<String, Tensor>,
}

impl NamedGradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.entries.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sum of squared entries over all tensors.
    pub fn norm_sq(&self) -> f64 {
        self.entries.values().map(|t| t.dot(t)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Inner product treating both maps as one flattened vector.
    pub fn dot(&self, other: &NamedGradients) -> f64 {
        self.entries
            .iter()
            .filter_map(|(k, a)| other.entries.get(k).map(|b| a.dot(b)))
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.entries.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += factor · other`, creating entries where needed.
    pub fn add_scaled(&mut self, other: &NamedGradients, factor: f64) {
        for (k, g) in &other.entries {
            match self.entries.get_mut(k) {
                Some(t) => super::kernels::axpy(factor, g.data(), t.data_mut()),
                None => {
                    let mut t = g.clone();
                    if factor != 1.0 {
                        t.data_mut().iter_mut().for_each(|v| *v *= factor);
                    }
                    self.entries.insert(k.clone(), t);
                }
            }
        }
    }

    /// Checks every entry against the registry: the name must exist and the
    /// shape must match.
    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        for (name, g) in &self.entries {
            let p = store.by_name(name)?;
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "gradient",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}
