//! Named registry of learnable tensors.

use std::ops::Index;

use crate::error::{Result, SeedError};
use crate::numeric::{RngState, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if self.values[id.0].shape() != value.shape() {
            return Err(SeedError::shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.values.iter_mut()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on the tape, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound {
            vars: self
                .values
                .iter()
                .map(|t| tape.leaf(t.clone(), trainable))
                .collect(),
        }
    }
}

/// Parameters recorded on a tape, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Substitutes the variable bound to `id`; used to route a parameter
    /// through an externally created tape variable.
    pub fn with(mut self, id: ParamId, var: Var) -> Self {
        self.vars[id.0] = var;
        self
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// `x W + b` over the last axis of `x`, with all leading axes folded into
/// one matrix product.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let w_shape = tape.shape(w).to_vec();
    if shape.is_empty() || w_shape.len() != 2 || w_shape[0] != shape[shape.len() - 1] {
        return Err(SeedError::shape(format!(
            "linear: input {shape:?} with weight {w_shape:?}"
        )));
    }
    let rows = shape[..shape.len() - 1].iter().product();
    let flat = tape.reshape(x, &[rows, w_shape[0]])?;
    let y = tape.matmul(flat, w)?;
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = w_shape[1];
    let y = tape.reshape(y, &out_shape)?;
    match b {
        Some(b) => tape.add_suffix(y, b),
        None => Ok(y),
    }
}

/// Glorot-uniform initialization for a `fan_in x fan_out` map.
pub fn glorot(rng: &mut RngState, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    rng.uniform_tensor(shape, bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_round_trip() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros(&[2, 3]));
        let b = store.add("b", Tensor::zeros(&[4]));
        assert_eq!(store.scalar_count(), 10);
        assert_eq!(store.find("b"), Some(b));
        assert_eq!(store.name(a), "a");
        assert!(store.set(a, Tensor::zeros(&[3, 2])).is_err());

        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, true);
        assert_eq!(tape.shape(bound[b]), &[4]);
        assert!(tape.requires_grad(bound[a]));
    }
}
