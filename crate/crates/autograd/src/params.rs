use std::collections::BTreeMap;

use rand::Rng;

use crate::tensor::Tensor;

/// Named parameter tensors. Names are dot-separated namespaces (`encoder.l1.conv.w`);
/// iteration order is lexicographic so serialization is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Parameters whose name starts with `prefix.`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Tensor)> + 'a {
        self.tensors
            .iter()
            .filter(move |(k, _)| k.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('.')))
    }

    /// Moves every entry of `other` into this store.
    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    /// He-normal conv/linear weight; `fan_in` is the product of all but the leading dim.
    pub fn init_he<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], gain: f64, rng: &mut R) {
        let fan_in: usize = shape[1..].iter().product();
        let std = gain * (2.0 / fan_in as f64).sqrt();
        self.insert(name, Tensor::randn(shape, std, rng));
    }

    /// Glorot-uniform weight for saturating activations.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], rng: &mut R) {
        let fan_in: usize = shape[1..].iter().product();
        let fan_out = shape[0] * shape[2..].iter().product::<usize>();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.insert(name, Tensor::uniform(shape, -limit, limit, rng));
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }
}
