use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are state, never optimized.
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
    trainable: bool,
}

impl Param {
    /// Whether the optimizer may update this tensor.
    pub fn trainable(&self) -> bool {
        self.trainable && !self.kind.is_buffer()
    }
}

/// Named parameter tensors of one model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidSpec(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            kind,
            trainable: !kind.is_buffer(),
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable()
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Flattened copy of the selected tensors, in order.
    pub fn flatten(&self, ids: &[ParamId]) -> Vec<f64> {
        ids.iter().flat_map(|&id| self.value(id).data().to_vec()).collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn unflatten(&mut self, ids: &[ParamId], flat: &[f64]) {
        let mut offset = 0;
        for &id in ids {
            let t = self.value_mut(id);
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }
}

/// Registers parameters under a dotted name prefix with seeded initialization.
pub struct ParamBuilder {
    store: ParamStore,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    pub fn push(&mut self, scope: impl Into<String>) {
        self.prefix.push(scope.into());
    }

    pub fn pop(&mut self) {
        self.prefix.pop();
    }

    /// Runs `f` with `scope` appended to the name prefix.
    pub fn scoped<T>(&mut self, scope: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.push(scope);
        let out = f(self);
        self.pop();
        out
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(leaf.to_string());
        parts.join(".")
    }

    /// He-scaled normal weights: std = sqrt(2 / fan_in).
    pub fn weight(&mut self, leaf: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.weight_with_gain(leaf, shape, fan_in, 2.0)
    }

    /// Normal weights with std = sqrt(gain / fan_in).
    pub fn weight_with_gain(&mut self, leaf: &str, shape: &[usize], fan_in: usize, gain: f64) -> Result<ParamId> {
        let std = (gain / fan_in as f64).sqrt();
        let value = Tensor::randn(shape.to_vec(), std, &mut self.rng);
        self.store.add(self.full_name(leaf), value, ParamKind::Weight)
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], value: f64, kind: ParamKind) -> Result<ParamId> {
        self.store.add(self.full_name(leaf), Tensor::full(shape.to_vec(), value), kind)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_scoped_and_unique() {
        let mut b = ParamBuilder::new(0);
        b.scoped("enc", |b| b.weight("w", &[2, 2], 2)).unwrap();
        assert!(b.scoped("enc", |b| b.weight("w", &[2, 2], 2)).is_err());
        let store = b.finish();
        assert!(store.id("enc.w").is_some());
    }

    #[test]
    fn buffers_are_never_trainable() {
        let mut b = ParamBuilder::new(0);
        let id = b.constant("running_mean", &[3], 0.0, ParamKind::RunningMean).unwrap();
        let mut store = b.finish();
        store.set_trainable(id, true);
        assert!(!store.trainable(id));
    }
}
