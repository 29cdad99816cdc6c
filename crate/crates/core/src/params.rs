//! Named, ordered parameter storage shared by all network blocks.

use std::collections::HashMap;

use rand::Rng;

use crate::tensor::{Result, Shape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Learnable,
    /// Non-learnable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Insertion-ordered map from parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a new entry. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::input("ParamStore::insert", format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, kind, tensor });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].tensor)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].tensor),
            None => Err(TensorError::UnknownParam(name.to_string())),
        }
    }

    /// Overwrites an existing entry's values, keeping its shape.
    pub fn set_data(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let t = self.get_mut(name)?;
        if t.len() != data.len() {
            return Err(TensorError::dim("ParamStore::set_data", format!("`{name}` has {} values, got {}", t.len(), data.len())));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.index.get(name).map(|&i| self.entries[i].kind)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn learnable(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter().filter(|e| e.kind == ParamKind::Learnable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count over learnable entries.
    pub fn num_learnable(&self) -> usize {
        self.learnable().map(|e| e.tensor.len()).sum()
    }

    /// Names under `prefix.` (or equal to `prefix`), in insertion order.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().map(|e| e.name.as_str()).filter(move |n| {
            n.strip_prefix(prefix).is_some_and(|rest| rest.is_empty() || rest.starts_with('.'))
        })
    }

    pub fn fill(&mut self, name: &str, value: f64) -> Result<()> {
        self.get_mut(name)?.data_mut().fill(value);
        Ok(())
    }
}

/// Uniform initialization in `±sqrt(3 / fan_in)`, which keeps activation
/// variance unchanged through a linear layer.
pub fn fan_in_uniform(shape: Shape, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-bound..bound))
}
