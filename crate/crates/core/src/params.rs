//! Named parameter storage and per-forward binding onto a tape.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of named tensors. Order is registration order and
/// is the order used in checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Overwrites every tensor from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &Self) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("parameter layouts differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn same_values(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors
    }
}

/// Parameter initializers.
pub mod init {
    use super::*;

    pub fn normal<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| T::lit(dist.sample(rng))).collect()).expect("shape")
    }

    /// Uniform in ±1/√fan_in.
    pub fn fan_in_uniform<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Tensor::new(
            vec![fan_in, fan_out],
            (0..fan_in * fan_out).map(|_| T::lit(dist.sample(rng))).collect(),
        )
        .expect("shape")
    }
}

/// Lazily binds store parameters onto a tape during one forward pass.
pub struct Binder<'a, T> {
    store: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a, T: Scalar> Binder<'a, T> {
    /// `trainable` marks bound parameters as requiring gradients.
    pub fn new(store: &'a ParamStore<T>, trainable: bool) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
            trainable,
        }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn get(&mut self, tape: &mut Tape<T>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = tape.leaf(self.store.get(id).clone(), self.trainable);
        self.vars[id.0] = Some(v);
        v
    }

    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    /// Gradients for every parameter after `tape.backward`; unbound
    /// parameters get zeros.
    pub fn gradients(&self, tape: &Tape<T>) -> Vec<Tensor<T>> {
        self.store
            .ids()
            .map(|id| match self.vars[id.0].and_then(|v| tape.grad(v)) {
                Some(g) => g,
                None => Tensor::zeros(self.store.get(id).shape().to_vec()),
            })
            .collect()
    }
}
