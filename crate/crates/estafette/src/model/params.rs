//! Named parameter storage with gradient buffers.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
}

/// All learned arrays of one model, addressed by stable ids and by name.
/// Gradients accumulate additively until explicitly zeroed.
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn insert(&mut self, name: String, shape: Vec<usize>, value: Vec<f64>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let id = ParamId(self.entries.len());
        let numel = value.len();
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(Entry {
            name,
            shape,
            value,
            grad: vec![0.0; numel],
        });
        id
    }

    /// Xavier-uniform matrix: limit sqrt(6 / (fan_in + fan_out)).
    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value: Vec<f64> = (0..rows * cols)
            .map(|_| self.rng.gen_range(-limit..limit))
            .collect();
        self.insert(name.to_string(), vec![rows, cols], value)
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let numel = shape.iter().product();
        self.insert(name.to_string(), shape, vec![0.0; numel])
    }

    pub fn ones(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let numel = shape.iter().product();
        self.insert(name.to_string(), shape, vec![1.0; numel])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of learned scalars.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].grad
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Add `delta` into the gradient buffer of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[f64]) {
        let g = &mut self.entries[id.0].grad;
        debug_assert_eq!(g.len(), delta.len());
        for (g, d) in g.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Snapshot of all parameter values, in id order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(Error::contract(format!(
                "snapshot has {} arrays, store has {}",
                snapshot.len(),
                self.entries.len()
            )));
        }
        for (e, s) in self.entries.iter_mut().zip(snapshot) {
            if e.value.len() != s.len() {
                return Err(Error::contract(format!(
                    "snapshot array for `{}` has {} values, expected {}",
                    e.name,
                    s.len(),
                    e.value.len()
                )));
            }
            e.value.copy_from_slice(s);
        }
        Ok(())
    }
}

/// Parameters registered as grad-carrying leaves on one graph.
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    /// Register every parameter on `graph` (one leaf per parameter).
    pub fn all(store: &ParamStore, graph: &mut Graph) -> Bound {
        let tensors = store
            .ids()
            .map(|id| {
                graph
                    .leaf(store.shape(id).to_vec(), store.value(id).to_vec(), true)
                    .expect("parameter shapes are internally consistent")
            })
            .collect();
        Bound { tensors }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Pull gradients off `graph` into the store (additive).
    pub fn collect_grads(&self, store: &mut ParamStore, graph: &Graph) {
        for (i, t) in self.tensors.iter().enumerate() {
            if let Some(g) = graph.grad(t) {
                let g = g.to_vec();
                store.accumulate_grad(ParamId(i), &g);
            }
        }
    }
}
