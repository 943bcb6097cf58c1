//! Named parameter sets with Adam moment state.

use crate::rng::Stream;
use crate::tensor::Tensor;
use rand::Rng;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Optimized by Adam.
    Trainable,
    /// Carried state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub(crate) struct Entry {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
    pub m: Tensor,
    pub v: Tensor,
}

/// Named tensors in insertion order, plus per-parameter Adam moments and a
/// shared step counter. Insertion order is the serialization order, so
/// checkpoints are byte-stable.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    pub(crate) entries: Vec<Entry>,
    index: HashMap<String, usize>,
    pub(crate) step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, kind: ParamKind) {
        assert!(!self.index.contains_key(name), "duplicate parameter `{name}`");
        let shape = value.shape().to_vec();
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            kind,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn set(&mut self, name: &str, value: Tensor) {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        assert_eq!(self.entries[i].value.shape(), value.shape(), "shape change for `{name}`");
        self.entries[i].value = value;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.index.get(name).map(|&i| self.entries[i].kind)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, ParamKind)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value, e.kind))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Merge every entry of `other` into `self` (used to attach trained
    /// heads to a world-model parameter set). Names must not collide.
    pub fn absorb(&mut self, other: ParamSet) {
        for e in other.entries {
            assert!(!self.index.contains_key(&e.name), "duplicate parameter `{}`", e.name);
            self.index.insert(e.name.clone(), self.entries.len());
            self.entries.push(e);
        }
    }
}

/// Kaiming-uniform fan-in initialization: `U(-b, b)` with
/// `b = sqrt(6 / fan_in)`. Draw order is the flat tensor order, so a given
/// stream always produces the same weights.
pub fn init_kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Stream) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}
