//! Named, ordered storage for learnable tensors and normalization buffers.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to an entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trained by the optimizer.
    Learnable,
    /// State such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Parameters in construction order. Names are slash-delimited layer paths
/// such as `stage2/block0/gpe/gpm/gig/dw_strip/weight` and are unique.
#[derive(Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, kind, value });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::TensorMismatch {
                name: entry.name.clone(),
                reason: format!("shape {:?} does not match {:?}", value.shape(), entry.value.shape()),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn learnable(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.iter().filter(|(_, e)| e.kind == ParamKind::Learnable)
    }

    /// Number of learnable scalars.
    pub fn learnable_count(&self) -> usize {
        self.learnable().map(|(_, e)| e.value.numel()).sum()
    }

    /// Applies `f` to every entry whose name starts with `prefix`.
    pub fn update_prefix(&mut self, prefix: &str, mut f: impl FnMut(&str, &Tensor<T>) -> Tensor<T>) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.value = f(&e.name, &e.value);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), kind: e.kind, value: e.value.cast() })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Creates parameters under a path prefix with seeded initialization.
///
/// Convolution and linear weights are drawn from a normal distribution with
/// standard deviation `1/sqrt(fan_in)`, truncated to two standard deviations.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder { store, rng, prefix: String::new() }
    }

    pub fn path(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}/{leaf}", self.prefix)
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Runs `f` with `segment` appended to the prefix.
    pub fn scope<R>(&mut self, segment: &str, f: impl FnOnce(&mut ParamBuilder<'_, T>) -> R) -> R {
        let prefix = self.path(segment);
        let mut child = ParamBuilder { store: &mut *self.store, rng: &mut *self.rng, prefix };
        f(&mut child)
    }

    pub fn truncated_normal(&mut self, leaf: &str, dims: &[usize], fan_in: usize) -> Result<ParamId> {
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let z: f64 = normal.sample(&mut *self.rng);
            if z.abs() <= 2.0 {
                data.push(T::of(z * std));
            }
        }
        let t = Tensor::from_vec(dims.to_vec(), data)?;
        self.store.insert(self.path(leaf), ParamKind::Learnable, t)
    }

    pub fn constant(&mut self, leaf: &str, dims: &[usize], value: f64, kind: ParamKind) -> Result<ParamId> {
        let t = Tensor::full(dims.to_vec(), T::of(value))?;
        self.store.insert(self.path(leaf), kind, t)
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
