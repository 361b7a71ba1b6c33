//! Dense tensors and named parameter storage.
//!
//! Storage is 32-bit; reductions elsewhere in the crate accumulate in 64-bit.

use std::collections::HashMap;

use rand::Rng as _;

use crate::error::{FedError, Result};
use crate::rng::Rng;

/// Dense row-major tensor with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) || numel != data.len() {
            return Err(FedError::Dim {
                op: "tensor-new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], grad: None }
    }

    /// Uniform fan-in init: entries drawn from U(-a, a) with a = sqrt(3/fan_in),
    /// which gives variance 1/fan_in.
    pub fn uniform_fan_in(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Self {
        let a = (3.0 / fan_in.max(1) as f64).sqrt() as f32;
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-a..=a)).collect();
        Tensor { shape, data, grad: None }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Allocates (or keeps) the gradient buffer and returns it.
    pub fn grad_mut(&mut self) -> &mut Vec<f32> {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A named, optionally trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered collection of uniquely named parameters.
///
/// Insertion order is the canonical order for initialization, optimizer
/// state and checkpoint serialization, so runs stay deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    items: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.add_with(name, value, true)
    }

    pub fn add_with(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(FedError::Contract(format!("duplicate parameter name {name:?}")));
        }
        let id = self.items.len();
        self.index.insert(name.to_string(), id);
        self.items.push(Parameter { name: name.to_string(), value, trainable });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.items[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.items[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.items.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.items.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.value.zero_grad();
        }
    }

    /// Overwrites values from `(name, tensor)` pairs. Shapes must match the
    /// existing parameter; unknown names are returned untouched for the
    /// caller to judge.
    pub fn load_values(&mut self, tensors: Vec<(String, Tensor)>) -> Result<Vec<String>> {
        let mut unknown = Vec::new();
        for (name, t) in tensors {
            match self.index.get(&name) {
                Some(&i) => {
                    let cur = &mut self.items[i];
                    if cur.value.shape != t.shape {
                        return Err(FedError::Checkpoint(format!(
                            "tensor {name:?}: shape {:?} does not match expected {:?}",
                            t.shape, cur.value.shape
                        )));
                    }
                    cur.value.data = t.data;
                    cur.value.grad = None;
                }
                None => unknown.push(name),
            }
        }
        Ok(unknown)
    }
}
