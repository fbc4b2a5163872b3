use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::graph::{Gradients, Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub weight_decay_exempt: bool,
}

/// Trainable parameters plus non-trainable buffers (running statistics),
/// both addressed by unique name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<(String, Tensor<T>)>,
    index: HashMap<String, Slot>,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

/// Handle to a parameter, valid for the store that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Handle to a buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferId(pub usize);

/// Deterministic RNG for initializing the parameter called `name`, so that
/// identically named parameters start equal across model variants.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// He-uniform weight for a `[fan_in, fan_out]` dense layer.
pub fn he_uniform<T: Real>(seed: u64, name: &str, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let mut rng = param_rng(seed, name);
    Tensor::from_fn(&[fan_in, fan_out], |_| T::of(dist.sample(&mut rng)))
}

/// Gaussian tensor with the given standard deviation.
pub fn normal_init<T: Real>(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let mut rng = param_rng(seed, name);
    Tensor::from_fn(shape, |_| T::of(dist.sample(&mut rng)))
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new(), index: HashMap::new() }
    }

    fn claim(&mut self, name: &str, slot: Slot) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.to_string(), slot);
        Ok(())
    }

    pub fn add_param(&mut self, name: &str, tensor: Tensor<T>, weight_decay_exempt: bool) -> Result<ParamId> {
        self.claim(name, Slot::Param(self.params.len()))?;
        self.params.push(Parameter { name: name.to_string(), tensor, grad: None, weight_decay_exempt });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: &str, tensor: Tensor<T>) -> Result<BufferId> {
        self.claim(name, Slot::Buffer(self.buffers.len()))?;
        self.buffers.push((name.to_string(), tensor));
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].1
    }

    pub fn buffers(&self) -> &[(String, Tensor<T>)] {
        &self.buffers
    }

    /// Tensor stored under `name`, parameter or buffer.
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        match self.index.get(name)? {
            Slot::Param(i) => Some(&self.params[*i].tensor),
            Slot::Buffer(i) => Some(&self.buffers[*i].1),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        match self.index.get(name)? {
            Slot::Param(i) => Some(&mut self.params[*i].tensor),
            Slot::Buffer(i) => Some(&mut self.buffers[*i].1),
        }
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Parameters followed by buffers, in insertion order.
    pub fn named_tensors(&self) -> Vec<(&str, &Tensor<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.tensor))
            .chain(self.buffers.iter().map(|(n, t)| (n.as_str(), t)))
            .collect()
    }

    /// Registers every parameter as a differentiable leaf of `g`; the returned
    /// vars are indexed by [`ParamId`].
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.tensor.clone())).collect()
    }

    /// Copies gradients for bound parameters out of a backward pass,
    /// replacing any previous gradient.
    pub fn store_grads(&mut self, vars: &[Var], grads: &Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            p.grad = Some(grads.get_or_zeros(v, p.tensor.numel()));
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Euclidean norm of all stored gradients.
    pub fn grad_norm(&self) -> T {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add_param("a", Tensor::zeros(&[2]), false).unwrap();
        assert!(s.add_param("a", Tensor::zeros(&[2]), false).is_err());
        assert!(s.add_buffer("a", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let a = he_uniform::<f32>(7, "enc.w", 4, 3);
        let b = he_uniform::<f32>(7, "enc.w", 4, 3);
        let c = he_uniform::<f32>(7, "enc.v", 4, 3);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f32 / 4.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn grads_flow_into_store() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_param("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), false).unwrap();
        let mut g = Graph::new();
        let vars = s.bind(&mut g);
        let sq = g.mul(vars[id.0], vars[id.0]).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        s.store_grads(&vars, &grads);
        assert_eq!(s.param(id).grad.as_deref(), Some(&[2.0, 4.0][..]));
        assert!((s.grad_norm() - 20f64.sqrt()).abs() < 1e-12);
    }
}
