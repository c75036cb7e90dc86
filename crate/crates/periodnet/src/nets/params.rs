//! Named parameter storage shared by generators and discriminators.
//!
//! Master copies live outside any graph; each forward pass binds them into a
//! fresh [`Graph`](crate::tensor::Graph) as leaves and reads gradients back
//! out after backward. The optimizer mutates the master copies only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, TensorId};

/// Index of a parameter within its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<S>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.into(),
            shape,
            data,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    /// Total trainable scalar count.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Bind every parameter into a graph as a leaf, in store order.
    pub fn bind(&self, graph: &mut Graph<S>, trainable: bool) -> Result<Vec<TensorId>> {
        self.params
            .iter()
            .map(|p| graph.leaf(p.data.clone(), p.shape.clone(), trainable))
            .collect()
    }

    /// Gradients for all parameters from a completed backward sweep, in store
    /// order. Fails if a binding was created non-trainable.
    pub fn grads(&self, graph: &Graph<S>, bound: &[TensorId]) -> Result<Vec<Vec<S>>> {
        self.params
            .iter()
            .zip(bound)
            .map(|(p, &id)| {
                graph
                    .grad(id)
                    .map(|g| g.to_vec())
                    .ok_or_else(|| Error::Numeric {
                        detail: format!("no gradient for parameter {}", p.name),
                    })
            })
            .collect()
    }

    /// Deterministic fingerprint of all values; used by tests to assert that
    /// parameters did or did not change.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for p in &self.params {
            for v in &p.data {
                let bits = v.to_f64().unwrap().to_bits();
                h ^= bits;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}

/// Kaiming-uniform fan-in initialization: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
pub fn kaiming_uniform<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| crate::tensor::sc::<S>(rng.gen_range(-bound..bound)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn n_scalars_counts_every_value() {
        let mut store = ParamStore::<f64>::new();
        // A raw kernel-1 conv from 1 to 1 channel with bias: w + b = 2.
        store.add("conv.w", vec![1, 1, 1], vec![0.5]);
        store.add("conv.b", vec![1], vec![0.0]);
        assert_eq!(store.n_scalars(), 2);
    }

    #[test]
    fn bind_and_grads_align_with_store_order() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", vec![2], vec![1.0, 2.0]);
        let b = store.add("b", vec![1], vec![3.0]);
        let mut g = Graph::<f64>::new();
        let bound = store.bind(&mut g, true).unwrap();
        let prod = g.mul(bound[a.0], bound[a.0]).unwrap();
        let s1 = g.sum(prod).unwrap();
        let loss = g.add(s1, bound[b.0]).unwrap();
        g.backward(loss).unwrap();
        let grads = store.grads(&g, &bound).unwrap();
        assert_eq!(grads[0], vec![2.0, 4.0]);
        assert_eq!(grads[1], vec![1.0]);
    }

    #[test]
    fn kaiming_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vals = kaiming_uniform::<f64>(&mut rng, 1000, 24);
        let bound = (6.0 / 24.0f64).sqrt();
        assert!(vals.iter().all(|v| v.abs() < bound));
    }
}
