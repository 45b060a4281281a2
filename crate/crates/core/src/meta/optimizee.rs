use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::numerics::{DenseMatrix, DenseVector, RngStream};
use crate::problems::{mlp_loss_and_grad, Batch, ImageDataset, LassoProblem, MlpTask, RastriginInstance};

/// Objective a learned or analytic optimizer can drive.
pub trait Optimizee {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> DenseVector;
    /// Records `f(x)` for an `n x 1` var.
    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t>;
    /// Moves to the next step's objective (a new minibatch, for stochastic
    /// optimizees). Deterministic ones ignore it.
    fn advance(&mut self, _rng: &mut RngStream) {}
}

/// `f(θ) = ‖Wθ − y‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticOptimizee {
    pub w: DenseMatrix,
    pub y: DenseVector,
}

impl QuadraticOptimizee {
    /// `W` and `y` with i.i.d. standard normal entries.
    pub fn sample(rng: &mut RngStream, n: usize) -> Self {
        Self {
            w: rng.normal_matrix(n, n, 0.0, 1.0),
            y: DenseVector::from(rng.normal_vec(n, 0.0, 1.0)),
        }
    }

    fn residual(&self, x: &[f64]) -> DenseVector {
        self.w.matvec(x).expect("x has n entries").sub(&self.y)
    }
}

impl Optimizee for QuadraticOptimizee {
    fn dim(&self) -> usize {
        self.w.cols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.residual(x).norm_sq()
    }

    fn grad(&self, x: &[f64]) -> DenseVector {
        self.w.matvec_t(&self.residual(x)).expect("residual has n entries").scaled(2.0)
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let w = tape.constant(self.w.clone());
        let y = tape.constant(DenseMatrix::column_vector(&self.y));
        (w.matmul(x) - y).square().sum()
    }
}

impl Optimizee for RastriginInstance {
    fn dim(&self) -> usize {
        RastriginInstance::dim(self)
    }

    fn value(&self, x: &[f64]) -> f64 {
        RastriginInstance::value(self, x)
    }

    fn grad(&self, x: &[f64]) -> DenseVector {
        RastriginInstance::grad(self, x)
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        RastriginInstance::record(self, tape, x)
    }
}

/// Owned LASSO objective; the optimizer sees the subgradient with `sign(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoOptimizee {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub lambda: f64,
}

impl LassoOptimizee {
    fn problem(&self) -> LassoProblem<'_> {
        LassoProblem {
            a: &self.a,
            b: &self.b,
            lambda: self.lambda,
        }
    }
}

impl Optimizee for LassoOptimizee {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.problem().value(x)
    }

    fn grad(&self, x: &[f64]) -> DenseVector {
        let mut g = self.problem().smooth_grad(x);
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += self.lambda * crate::numerics::sign0(*xi);
        }
        g
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        self.problem().record(tape, x)
    }
}

/// MLP training loss on a minibatch redrawn by [`Optimizee::advance`].
#[derive(Debug, Clone)]
pub struct MlpOptimizee {
    pub task: MlpTask,
    pub data: Arc<ImageDataset>,
    pub batch_size: usize,
    pub batch: Batch,
}

impl MlpOptimizee {
    pub fn new(task: MlpTask, data: Arc<ImageDataset>, batch_size: usize, rng: &mut RngStream) -> Self {
        let batch = data.sample_batch(rng, batch_size);
        Self {
            task,
            data,
            batch_size,
            batch,
        }
    }
}

impl Optimizee for MlpOptimizee {
    fn dim(&self) -> usize {
        self.task.param_count()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.task.loss(x, &self.batch)
    }

    fn grad(&self, x: &[f64]) -> DenseVector {
        mlp_loss_and_grad(&self.task, x, &self.batch).expect("parameters sized by dim()").1
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        self.task.record(tape, x, &self.batch)
    }

    fn advance(&mut self, rng: &mut RngStream) {
        self.batch = self.data.sample_batch(rng, self.batch_size);
    }
}

impl<O: Optimizee + ?Sized> Optimizee for Box<O> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }

    fn grad(&self, x: &[f64]) -> DenseVector {
        (**self).grad(x)
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        (**self).record(tape, x)
    }

    fn advance(&mut self, rng: &mut RngStream) {
        (**self).advance(rng)
    }
}
