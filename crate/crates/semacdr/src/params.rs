//! Central registry of learnable parameters.
//!
//! Modules register their matrices once and hold [`ParamId`] handles; the
//! optimizer, checkpointing and gradient checks all iterate the store
//! uniformly. Binding a store onto a [`Tape`] creates one leaf per parameter
//! so a whole forward pass shares leaves.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Handle to one registered parameter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Learning-rate group a parameter belongs to: semantic-related modules train
/// with a smaller rate than the general components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrGroup {
    Semantic,
    General,
}

pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Matrix<T>>,
    groups: Vec<LrGroup>,
    frozen: Vec<bool>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), groups: Vec::new(), frozen: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Matrix<T>, group: LrGroup) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.groups.push(group);
        self.frozen.push(false);
        ParamId(self.values.len() - 1)
    }

    /// Register with uniform(-0.01, 0.01) entries.
    pub fn register_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        group: LrGroup,
        rng: &mut impl Rng,
    ) -> ParamId {
        let m = Matrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(-0.01..0.01)));
        self.register(name, m, group)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> LrGroup {
        self.groups[id.0]
    }

    /// Frozen parameters keep their values through optimizer steps.
    pub fn freeze(&mut self, id: ParamId) {
        self.frozen[id.0] = true;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::all_finite)
    }
}

/// A tape with every parameter bound as a leaf.
pub struct Bound<T> {
    pub tape: Tape<T>,
    vars: Vec<Var>,
}

impl<T: Scalar> Bound<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let mut tape = Tape::new();
        let vars = store.values.iter().map(|m| tape.leaf(m.clone())).collect();
        Self { tape, vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradient of the last backward pass for a parameter (zeros if the
    /// parameter did not participate).
    pub fn grad_of(&self, store: &ParamStore<T>, id: ParamId) -> Matrix<T> {
        self.tape.grad(self.vars[id.0]).cloned().unwrap_or_else(|| {
            let m = store.get(id);
            Matrix::zeros(m.rows, m.cols)
        })
    }
}
