//! Named parameter storage shared by the model, optimizer, and checkpointer.

use crate::tensor::{Graph, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: ArrayD<f64>,
    pub momentum: ArrayD<f64>,
}

/// Flat registry of every learnable tensor, with SGD momentum buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let momentum = ArrayD::zeros(value.raw_dim());
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            momentum,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

/// Parameters materialized on a [`Graph`] for one forward/backward pass.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Leases every parameter onto the graph; `trainable` controls whether
    /// gradients are recorded.
    pub fn bind(graph: &mut Graph, store: &ParamStore, trainable: bool) -> Self {
        let vars = store
            .entries
            .iter()
            .map(|e| {
                if trainable {
                    graph.leaf(e.value.clone())
                } else {
                    graph.constant(e.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// All leased parameter nodes, indexed like the store's entries.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Draws one standard normal deviate (Box-Muller over the seeded stream).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.random();
        if u1 > 1e-300 {
            let u2: f64 = rng.random();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// He-style initialization for a convolution weight `[Cout,Cin,kh,kw]`.
pub fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| standard_normal(rng) * std).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn binding_reflects_store_values() {
        let mut store = ParamStore::new();
        let id = store.add("w", ArrayD::from_elem(IxDyn(&[2, 2]), 1.5));
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, &store, true);
        assert_eq!(g.value(bound.var(id)), store.value(id));
    }

    #[test]
    fn he_init_is_seed_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(he_normal(&mut r1, &[4, 3, 3, 3]), he_normal(&mut r2, &[4, 3, 3, 3]));
    }
}
