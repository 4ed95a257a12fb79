//! Named trainable tensors with paired gradient accumulators.

use std::collections::HashMap;

use crate::autodiff::{GradStore, ParamId, Tape, Tensor, ValueId};
use crate::types::Real;

struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// All trainable tensors of the model. Single-writer: one training thread
/// mutates values and gradients; evaluation shares read-only references.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        debug_assert!(!self.index.contains_key(name), "duplicate param {name}");
        let id = ParamId(self.entries.len());
        let grad = Tensor::zeros_like(&value);
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_by_name(&self, name: &str) -> &Tensor {
        self.value(self.id(name).unwrap_or_else(|| panic!("no param {name}")))
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.entries
            .iter()
            .map(|e| e.value.shape().to_vec())
            .collect()
    }

    /// Fresh zeroed gradient store aligned with this parameter set.
    pub fn grad_store(&self) -> GradStore {
        GradStore::from_shapes(&self.shapes())
    }

    /// Adds tape-accumulated gradients into the per-parameter slots.
    pub fn accumulate(&mut self, grads: &GradStore) {
        debug_assert_eq!(grads.len(), self.entries.len());
        for id in 0..self.entries.len() {
            self.entries[id].grad.add_assign(grads.slot(ParamId(id)));
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Puts the parameter on a tape as a full leaf.
    pub fn leaf(&self, tape: &mut Tape, id: ParamId) -> ValueId {
        tape.param(id, self.value(id))
    }

    /// Row lookup leaf; gradients scatter back into the table.
    pub fn lookup(&self, tape: &mut Tape, id: ParamId, rows: &[usize]) -> ValueId {
        tape.lookup(id, self.value(id), rows)
    }

    /// Deep copy of names and values (for checkpoints / best-model snapshots).
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) {
        for (name, value) in snapshot {
            let id = self.id(name).unwrap_or_else(|| panic!("no param {name}"));
            self.entries[id.0].value = value.clone();
        }
    }

    /// Total squared distance to another store with identical layout.
    pub fn max_abs_diff(&self, other: &ParamStore) -> Real {
        self.entries
            .iter()
            .zip(&other.entries)
            .flat_map(|(a, b)| {
                a.value
                    .data()
                    .iter()
                    .zip(b.value.data())
                    .map(|(x, y)| (x - y).abs())
            })
            .fold(0.0, Real::max)
    }
}
