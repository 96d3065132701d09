//! Named, ordered parameter storage shared by every model.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub(crate) store: u64,
    pub(crate) index: usize,
}

impl ParamId {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
}

/// Parameters in declaration order. The order is what checkpoints and the
/// optimizer rely on, so entries are only ever appended.
#[derive(Clone, Debug)]
pub struct ParamStore {
    uid: u64,
    entries: Vec<ParamEntry>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
        });
        ParamId {
            store: self.uid,
            index: self.entries.len() - 1,
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        self.check(id);
        &self.entries[id.index].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.check(id);
        &mut self.entries[id.index].tensor
    }

    /// Overwrites a parameter's values, keeping its shape.
    pub fn set(&mut self, id: ParamId, data: &[f64]) -> Result<()> {
        let t = self.get_mut(id);
        if t.len() != data.len() {
            return Err(Error::shape("ParamStore::set", format!("{} vs {}", t.len(), data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ParamStore::set".into()));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            let n = e.tensor.len();
            // lengths always agree, so this cannot fail
            let _ = e.tensor.set_grad(vec![0.0; n]);
        }
    }

    pub fn clear_grad(&mut self) {
        for e in &mut self.entries {
            e.tensor.clear_grad();
        }
    }

    /// Adds i.i.d. `N(0, std²)` noise to every parameter. Used to move a
    /// zero-initialized model off its identity starting point in tests and
    /// examples.
    pub fn perturb<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        for e in &mut self.entries {
            let noise = Tensor::randn(e.tensor.shape(), std, rng);
            for (v, n) in e.tensor.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
        }
    }

    /// Flattened copy of all parameter values in declaration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.tensor.data().iter().copied())
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(|index| ParamId {
            store: self.uid,
            index,
        })
    }

    /// Ids of all entries whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(index, _)| ParamId {
                store: self.uid,
                index,
            })
            .collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(|index| ParamId {
            store: self.uid,
            index,
        })
    }

    fn check(&self, id: ParamId) {
        assert_eq!(
            id.store, self.uid,
            "parameter id used with a store it does not belong to"
        );
    }
}
