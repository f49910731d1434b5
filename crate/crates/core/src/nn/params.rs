use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tensor::{Shape, Tensor};

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

/// A named trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// An ordered collection of parameters belonging to one network.
#[derive(Clone, Debug)]
pub struct ParamSet {
    id: u64,
    params: Vec<Param>,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self { id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed), params: Vec::new() }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.params.push(Param { name: name.into(), tensor });
        self.params.len() - 1
    }

    /// Uniform `±sqrt(1 / fan_in)` weights.
    pub fn push_uniform(&mut self, name: impl Into<String>, shape: Shape, fan_in: usize, rng: &mut impl Rng) -> usize {
        let bound = (1.0 / fan_in as f64).sqrt();
        let values = (0..shape.len()).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.push(name, Tensor::from_parts(shape, values))
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.values().len()).sum()
    }
}
