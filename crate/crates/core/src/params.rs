//! Named parameter storage, gradients, and the momentum SGD optimizer.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters in declaration order. The order is the serialization order of
/// checkpoints, so it must not depend on anything but the model config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a matrix initialized uniformly in `[-bound, bound]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    /// Adds a matrix of independent standard normal draws.
    pub fn add_normal<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
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

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Rounds every value to the nearest `f32`, so that an in-memory state
    /// matches what a float32 checkpoint restores.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for x in t.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    /// A store with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }
}

/// Per-parameter gradients; `None` where a parameter was not on the graph.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(len: usize) -> Self {
        Gradients {
            grads: (0..len).map(|_| None).collect(),
        }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Tensor>>) -> Self {
        Gradients { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        math::sqrt(self.grads.iter().flatten().map(Tensor::sum_sq).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }

    /// Scales all gradients down so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// SGD with classical momentum: `v ← μ·v + g`, `θ ← θ − lr·v`. Parameters
/// without a gradient are left untouched, momentum included.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    velocity: ParamStore,
}

impl Sgd {
    pub fn new(params: &ParamStore, lr: f64, momentum: f64, clip_norm: Option<f64>) -> Self {
        Sgd {
            lr,
            momentum,
            clip_norm,
            velocity: params.zeros_like(),
        }
    }

    pub fn velocity(&self) -> &ParamStore {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut ParamStore {
        &mut self.velocity
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &mut Gradients) {
        if let Some(c) = self.clip_norm {
            grads.clip_global_norm(c);
        }
        for id in params.ids() {
            let Some(g) = grads.get(id) else { continue };
            let v = self.velocity.get_mut(id);
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.momentum * *vi + gi;
            }
            let p = params.get_mut(id);
            for (pi, vi) in p.data_mut().iter_mut().zip(self.velocity.get(id).data()) {
                *pi -= self.lr * vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sgd_momentum_matches_hand_computation() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0]));
        let mut opt = Sgd::new(&store, 0.1, 0.9, None);
        for _ in 0..2 {
            let mut g = Gradients::new(1);
            g.grads[0] = Some(Tensor::vector(vec![2.0]));
            opt.step(&mut store, &mut g);
        }
        // v1 = 2, w1 = 0.8; v2 = 0.9*2 + 2 = 3.8, w2 = 0.8 - 0.38
        assert!((store.get(id).item() - 0.42).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = Gradients::new(2);
        g.grads[0] = Some(Tensor::vector(vec![3.0, 4.0]));
        g.grads[1] = Some(Tensor::vector(vec![12.0]));
        let before = g.clip_global_norm(5.0);
        assert!((before - 13.0).abs() < 1e-12);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
    }
}
