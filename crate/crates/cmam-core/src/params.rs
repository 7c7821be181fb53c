//! Named parameter storage and tape binding.
//!
//! Trainable parameters live outside any tape as plain shaped arrays; a
//! [`Binder`] copies them onto a tape as leaf nodes on first use so that a
//! fresh recording can be built per training step.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng;

use crate::tensor::{Result, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorData {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape {:?} does not match {} values",
            shape,
            values.len()
        );
        TensorData { shape, values }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        TensorData { shape: shape.to_vec(), values: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        TensorData { shape: vec![1], values: vec![v] }
    }

    /// Uniform init in `(-scale, scale)`.
    pub fn uniform<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        TensorData { shape: shape.to_vec(), values }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Ordered collection of named tensors. Iteration order is the sorted name
/// order, which checkpointing relies on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, TensorData>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: TensorData) {
        let name = name.into();
        assert!(
            self.map.insert(name.clone(), t).is_none(),
            "duplicate parameter name {name}"
        );
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut TensorData> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorData)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut TensorData)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn total_len(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }
}

/// Binds a [`ParamStore`] to one tape, creating each parameter's leaf node
/// lazily and exactly once. Can also wrap leaves created elsewhere (the
/// gradient-check harness owns its own), in which case no store is needed.
pub struct Binder<'a> {
    tape: &'a Tape,
    store: Option<&'a ParamStore>,
    bound: RefCell<BTreeMap<String, Var>>,
}

impl<'a> Binder<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore) -> Self {
        Binder { tape, store: Some(store), bound: RefCell::new(BTreeMap::new()) }
    }

    /// Wraps already-created tape vars under their parameter names.
    pub fn from_vars(tape: &'a Tape, pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Binder {
            tape,
            store: None,
            bound: RefCell::new(pairs.into_iter().collect()),
        }
    }

    pub fn tape(&self) -> &'a Tape {
        self.tape
    }

    pub fn var(&self, name: &str) -> Var {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let t = self
            .store
            .and_then(|s| s.get(name))
            .unwrap_or_else(|| panic!("parameter {name} missing from store"));
        let v = self
            .tape
            .leaf(&t.shape, t.values.clone())
            .expect("stored tensors are internally consistent");
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    /// Gradients of every parameter touched by the forward pass, keyed by
    /// name. Call after `tape.backward`. Untouched parameters are absent.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .borrow()
            .iter()
            .map(|(name, var)| (name.clone(), self.tape.grad(*var)))
            .collect()
    }

    /// Gradients for every parameter in the store, zero-filled for those
    /// the loss never reached. Requires a store-backed binder.
    pub fn grads_full(&self) -> BTreeMap<String, Vec<f64>> {
        let store = self.store.expect("grads_full needs a store-backed binder");
        let bound = self.bound.borrow();
        store
            .iter()
            .map(|(name, t)| {
                let g = match bound.get(name) {
                    Some(var) => self.tape.grad(*var),
                    None => vec![0.0; t.numel()],
                };
                (name.clone(), g)
            })
            .collect()
    }
}

/// Convenience for building a leaf from a [`TensorData`] without a store.
pub fn leaf_of(tape: &Tape, t: &TensorData) -> Result<Var> {
    tape.leaf(&t.shape, t.values.clone())
}
