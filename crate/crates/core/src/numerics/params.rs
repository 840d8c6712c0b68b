use std::collections::BTreeMap;

use super::tape::ParamGrads;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid("params", format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    /// Total number of trainable scalars; each registered tensor counts once.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (id, g) in &grads.entries {
            self.tensors[id.0].accumulate_grad(g);
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Gradient buffer of `id`, treating an absent buffer as zeros.
    pub fn grad_or_zero(&self, id: ParamId) -> Vec<f64> {
        let t = &self.tensors[id.0];
        t.grad.clone().unwrap_or_else(|| vec![0.0; t.len()])
    }
}

impl ParamGrads {
    /// Sums gradient sets in the given order.
    pub fn sum_ordered<'a>(parts: impl IntoIterator<Item = &'a ParamGrads>) -> ParamGrads {
        let mut acc: BTreeMap<ParamId, Vec<f64>> = BTreeMap::new();
        for part in parts {
            for (id, g) in &part.entries {
                match acc.get_mut(id) {
                    Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => {
                        acc.insert(*id, g.clone());
                    }
                }
            }
        }
        ParamGrads {
            entries: acc.into_iter().collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, g)| g.as_slice())
    }
}
