use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Matrix, Tape, Var};

/// A named trainable matrix. `decay` is false for biases and norm gains.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Rc<Matrix>,
    pub decay: bool,
}

/// Ordered collection of parameters addressed by insertion index.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, decay: bool) -> usize {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name,
            value: Rc::new(value),
            decay,
        });
        self.params.len() - 1
    }

    /// Normal(0, std) initialised weight, subject to weight decay.
    pub fn normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> usize {
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.add(name, Matrix::from_vec(rows, cols, data), true)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.add(name, Matrix::zeros(rows, cols), false)
    }

    pub fn ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.add(name, Matrix::filled(rows, cols, 1.0), false)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn value(&self, i: usize) -> &Matrix {
        &self.params[i].value
    }

    /// Mutable access; clones the matrix only if a tape still shares it.
    pub fn value_mut(&mut self, i: usize) -> &mut Matrix {
        Rc::make_mut(&mut self.params[i].value)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.value.rows() * p.value.cols())
            .sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.rows() * p.value.cols())
            .sum()
    }

    /// Records every parameter on the tape without copying.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.shared(&p.value, requires_grad))
            .collect()
    }
}
