//! Named learnable tensors and their initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor on `tape` as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.tensors.iter().map(|t| Some(tape.param(t.clone()))).collect())
    }

    /// Registers every tensor as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound(self.tensors.iter().map(|t| Some(tape.constant(t.clone()))).collect())
    }

    /// Registers only `ids` as constants; other handles stay unbound.
    pub fn bind_frozen_subset(&self, tape: &mut Tape, ids: &[ParamId]) -> Bound {
        let mut vars = vec![None; self.tensors.len()];
        for id in ids {
            vars[id.0] = Some(tape.constant(self.tensors[id.0].clone()));
        }
        Bound(vars)
    }

    /// Flattens every value into one vector, in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

/// Tape handles for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Option<Var>>);

impl Bound {
    /// Panics if `id` was left out of a subset binding.
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0].expect("parameter not bound on this tape")
    }

    /// Gradients of all bound params; untouched params get zeros.
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.0
            .iter()
            .map(|v| {
                let v = v.expect("gradients need a full binding");
                tape.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
            })
            .collect()
    }
}

/// Seeded parameter initializer.
pub struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    /// Uniform in `±1/√fan_in`, with `fan_in` the last extent (weights are `out × in`).
    pub fn fan_in(&mut self, shape: &[usize]) -> Tensor {
        let fan_in = *shape.last().unwrap();
        self.uniform(shape, 1.0 / (fan_in as f64).sqrt())
    }

    /// Bias for a layer with the given fan-in, same bound as its weight.
    pub fn bias(&mut self, len: usize, fan_in: usize) -> Tensor {
        self.uniform(&[1, len], 1.0 / (fan_in as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn fan_in_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = Init::new(&mut rng);
        let w = init.fan_in(&[8, 16]);
        assert!(w.data().iter().all(|x| x.abs() <= 0.25));
    }

    #[test]
    fn bound_grads_default_to_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::row(vec![1.0, 2.0]));
        let _b = store.add("b", Tensor::row(vec![3.0]));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let s = tape.sum(bound.var(a));
        tape.backward(s).unwrap();
        assert_eq!(bound.grads(&tape), vec![vec![1.0, 1.0], vec![0.0]]);
    }
}
