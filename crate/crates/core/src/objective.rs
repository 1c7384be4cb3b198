//! Differentiable scalar losses over the input space.
//!
//! Attacks, oracles and the flatness tools are written against
//! [`InputLoss`], so a trained [`Model`] and the closed-form affine and
//! quadratic stubs share one code path.

use crate::model::Model;
use crate::tensor::{argmax, dot};

pub trait InputLoss: Sync {
    fn input_dim(&self) -> usize;

    /// Loss of `class` at `x`.
    fn loss(&self, x: &[f64], class: usize) -> f64;

    /// Loss of `class` at `x` and its gradient with respect to `x`.
    fn loss_grad(&self, x: &[f64], class: usize) -> (f64, Vec<f64>);

    /// Predicted class, if the loss comes from a classifier.
    fn predict(&self, _x: &[f64]) -> Option<usize> {
        None
    }
}

impl InputLoss for Model {
    fn input_dim(&self) -> usize {
        Model::input_dim(self)
    }

    fn loss(&self, x: &[f64], class: usize) -> f64 {
        crate::model::loss_ce(&self.logits(x), class).expect("class validated by caller")
    }

    fn loss_grad(&self, x: &[f64], class: usize) -> (f64, Vec<f64>) {
        let lg = self.loss_grad_full(x, class, false);
        (lg.value, lg.grad_input)
    }

    fn predict(&self, x: &[f64]) -> Option<usize> {
        Some(argmax(&self.logits(x)))
    }
}

/// `f(x) = aᵀx + c`, independent of the class.
#[derive(Debug, Clone)]
pub struct AffineLoss {
    pub a: Vec<f64>,
    pub c: f64,
}

impl InputLoss for AffineLoss {
    fn input_dim(&self) -> usize {
        self.a.len()
    }

    fn loss(&self, x: &[f64], _class: usize) -> f64 {
        dot(&self.a, x) + self.c
    }

    fn loss_grad(&self, x: &[f64], class: usize) -> (f64, Vec<f64>) {
        (self.loss(x, class), self.a.clone())
    }
}

/// `f(x) = ½ xᵀAx` with symmetric `A` (row-major, `dim × dim`).
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub dim: usize,
    pub a: Vec<f64>,
}

impl QuadraticLoss {
    /// Symmetrizes `m` as `(m + mᵀ)/2`.
    pub fn symmetric(dim: usize, m: &[f64]) -> Self {
        assert_eq!(m.len(), dim * dim);
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] = 0.5 * (m[i * dim + j] + m[j * dim + i]);
            }
        }
        Self { dim, a }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| dot(&self.a[i * self.dim..(i + 1) * self.dim], v))
            .collect()
    }
}

impl InputLoss for QuadraticLoss {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, x: &[f64], _class: usize) -> f64 {
        0.5 * dot(x, &self.matvec(x))
    }

    fn loss_grad(&self, x: &[f64], _class: usize) -> (f64, Vec<f64>) {
        let g = self.matvec(x);
        (0.5 * dot(x, &g), g)
    }
}
