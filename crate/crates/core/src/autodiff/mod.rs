//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! Every operation appends a node holding its eagerly computed value, so node
//! indices are already a topological order. [`Tape::backward`] walks the
//! tape once in reverse. Values are dense column-major matrices; scalars are
//! `1x1` and vectors are `n x 1`.
//!
//! Shape errors in the recording operations panic: they are programming
//! errors in the caller, not recoverable conditions.

mod check;

pub use check::{grad_check, grad_check_many, GRAD_CHECK_STEP};

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::numerics::{gemm, sigmoid, soft_threshold_scalar, DenseMatrix};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Neg,
    /// `m x n` plus an `m x 1` column repeated across all columns.
    AddColumn,
    MatMul,
    Transpose,
    Sum,
    Mean,
    Square,
    Abs,
    Log,
    Exp,
    Tanh,
    Sigmoid,
    Relu,
    Cos,
    Sin,
    Scale(f64),
    /// scalar var (first parent) times matrix (second parent)
    ScaleBy,
    /// matrix (first parent), scalar threshold (second parent)
    SoftThreshold,
    /// soft threshold with a frozen set of entries passed through unchanged
    SoftThresholdPassthrough(Vec<bool>),
    /// contiguous column-major window of the parent reshaped to the node's shape
    Window(usize),
    /// mean softmax cross-entropy over columns of a logit matrix
    SoftmaxCrossEntropy(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    parents: [usize; 2],
    needs_grad: bool,
}

/// Append-only record of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`]. Cheap to copy; tied to the tape's lifetime,
/// so clearing the tape (which needs `&mut`) statically invalidates it.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    rows: usize,
    cols: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({}x{})", self.index, self.rows, self.cols)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// Differentiable input.
    pub fn var(&self, value: DenseMatrix) -> Var<'_> {
        self.push(value, Op::Leaf, [NONE, NONE], true)
    }

    /// Non-differentiable input; its adjoint is never formed.
    pub fn constant(&self, value: DenseMatrix) -> Var<'_> {
        self.push(value, Op::Constant, [NONE, NONE], false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.var(DenseMatrix::scalar(v))
    }

    pub fn constant_scalar(&self, v: f64) -> Var<'_> {
        self.constant(DenseMatrix::scalar(v))
    }

    fn push(&self, value: DenseMatrix, op: Op, parents: [usize; 2], needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        let (rows, cols) = value.shape();
        nodes.push(Node {
            value,
            op,
            parents,
            needs_grad,
        });
        Var {
            tape: self,
            index,
            rows,
            cols,
        }
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].needs_grad
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::contract("loss belongs to a different tape"));
        }
        if (loss.rows, loss.cols) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let nodes = self.nodes.borrow();
        let mut adj: Vec<Option<DenseMatrix>> = vec![None; loss.index + 1];
        adj[loss.index] = Some(DenseMatrix::scalar(1.0));
        for i in (0..=loss.index).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let [p0, p1] = node.parents;
            let want0 = p0 != NONE && nodes[p0].needs_grad;
            let want1 = p1 != NONE && nodes[p1].needs_grad;
            let (c0, c1) = if want0 || want1 {
                local_adjoints(&nodes, node, &g, want0, want1)
            } else {
                (None, None)
            };
            adj[i] = Some(g);
            if let Some(c) = c0 {
                accumulate(&mut adj[p0], c);
            }
            if let Some(c) = c1 {
                accumulate(&mut adj[p1], c);
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

fn accumulate(slot: &mut Option<DenseMatrix>, contrib: DenseMatrix) {
    match slot {
        Some(acc) => acc.axpy(1.0, &contrib),
        None => *slot = Some(contrib),
    }
}

fn zip_map(a: &DenseMatrix, b: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    debug_assert_eq!(a.shape(), b.shape());
    DenseMatrix::from_raw(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn local_adjoints(
    nodes: &[Node],
    node: &Node,
    g: &DenseMatrix,
    want0: bool,
    want1: bool,
) -> (Option<DenseMatrix>, Option<DenseMatrix>) {
    let [p0, p1] = node.parents;
    let x = || &nodes[p0].value;
    let y = || &nodes[p1].value;
    let out = &node.value;
    let unary = |f: &dyn Fn(f64, f64) -> f64| (Some(zip_map(g, x(), f)), None);
    match &node.op {
        Op::Leaf | Op::Constant => (None, None),
        Op::Add => (want0.then(|| g.clone()), want1.then(|| g.clone())),
        Op::Sub => (want0.then(|| g.clone()), want1.then(|| g.scale(-1.0))),
        Op::Neg => (Some(g.scale(-1.0)), None),
        Op::Mul => (
            want0.then(|| zip_map(g, y(), |a, b| a * b)),
            want1.then(|| zip_map(g, x(), |a, b| a * b)),
        ),
        Op::AddColumn => {
            let c1 = want1.then(|| {
                let mut s = DenseMatrix::zeros(g.rows(), 1);
                for j in 0..g.cols() {
                    for (acc, v) in s.data_mut().iter_mut().zip(g.column(j)) {
                        *acc += v;
                    }
                }
                s
            });
            (want0.then(|| g.clone()), c1)
        }
        Op::MatMul => {
            let c0 = want0.then(|| {
                let mut d = DenseMatrix::zeros(x().rows(), x().cols());
                gemm(1.0, g, false, y(), true, 0.0, &mut d);
                d
            });
            let c1 = want1.then(|| {
                let mut d = DenseMatrix::zeros(y().rows(), y().cols());
                gemm(1.0, x(), true, g, false, 0.0, &mut d);
                d
            });
            (c0, c1)
        }
        Op::Transpose => (Some(g.transpose()), None),
        Op::Sum => {
            let s = g.item();
            (Some(DenseMatrix::filled(x().rows(), x().cols(), s)), None)
        }
        Op::Mean => {
            let s = g.item() / x().len() as f64;
            (Some(DenseMatrix::filled(x().rows(), x().cols(), s)), None)
        }
        Op::Square => unary(&|gi, xi| 2.0 * xi * gi),
        Op::Abs => unary(&|gi, xi| crate::numerics::sign0(xi) * gi),
        Op::Log => unary(&|gi, xi| gi / xi),
        Op::Exp => (Some(zip_map(g, out, |gi, yi| gi * yi)), None),
        Op::Tanh => (Some(zip_map(g, out, |gi, yi| gi * (1.0 - yi * yi))), None),
        Op::Sigmoid => (Some(zip_map(g, out, |gi, yi| gi * yi * (1.0 - yi))), None),
        Op::Relu => unary(&|gi, xi| if xi > 0.0 { gi } else { 0.0 }),
        Op::Cos => unary(&|gi, xi| -gi * xi.sin()),
        Op::Sin => unary(&|gi, xi| gi * xi.cos()),
        Op::Scale(s) => (Some(g.scale(*s)), None),
        Op::ScaleBy => {
            let s = x().item();
            let c0 = want0.then(|| {
                let d: f64 = g.data().iter().zip(y().data()).map(|(a, b)| a * b).sum();
                DenseMatrix::scalar(d)
            });
            (c0, want1.then(|| g.scale(s)))
        }
        Op::SoftThreshold => {
            let theta = y().item();
            let c0 = want0.then(|| zip_map(g, x(), |gi, xi| if xi.abs() > theta { gi } else { 0.0 }));
            let c1 = want1.then(|| {
                let d: f64 = g
                    .data()
                    .iter()
                    .zip(x().data())
                    .map(|(&gi, &xi)| {
                        if xi > theta {
                            -gi
                        } else if xi < -theta {
                            gi
                        } else {
                            0.0
                        }
                    })
                    .sum();
                DenseMatrix::scalar(d)
            });
            (c0, c1)
        }
        Op::SoftThresholdPassthrough(pass) => {
            let theta = y().item();
            let xv = x();
            let c0 = want0.then(|| {
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .zip(pass)
                    .map(|((&gi, &xi), &p)| if p || xi.abs() > theta { gi } else { 0.0 })
                    .collect();
                DenseMatrix::from_raw(xv.rows(), xv.cols(), data)
            });
            let c1 = want1.then(|| {
                let d: f64 = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .zip(pass)
                    .map(|((&gi, &xi), &p)| {
                        if p {
                            0.0
                        } else if xi > theta {
                            -gi
                        } else if xi < -theta {
                            gi
                        } else {
                            0.0
                        }
                    })
                    .sum();
                DenseMatrix::scalar(d)
            });
            (c0, c1)
        }
        Op::Window(offset) => {
            let src = x();
            let mut d = DenseMatrix::zeros(src.rows(), src.cols());
            d.data_mut()[*offset..*offset + g.len()].copy_from_slice(g.data());
            (Some(d), None)
        }
        Op::SoftmaxCrossEntropy(labels) => {
            let logits = x();
            let scale = g.item() / labels.len() as f64;
            let mut d = DenseMatrix::zeros(logits.rows(), logits.cols());
            for (j, &label) in labels.iter().enumerate() {
                let probs = softmax(logits.column(j));
                let col = d.column_mut(j);
                for (k, p) in probs.into_iter().enumerate() {
                    col[k] = scale * (p - if k == label { 1.0 } else { 0.0 });
                }
            }
            (Some(d), None)
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Adjoint table produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// `∂loss/∂v`; zero when `v` is unreachable from the loss or constant.
    pub fn wrt(&self, v: Var<'_>) -> DenseMatrix {
        self.adjoints
            .get(v.index)
            .and_then(|a| a.clone())
            .unwrap_or_else(|| DenseMatrix::zeros(v.rows, v.cols))
    }

    pub fn wrt_ref(&self, v: Var<'_>) -> Option<&DenseMatrix> {
        self.adjoints.get(v.index).and_then(|a| a.as_ref())
    }
}

impl<'t> Var<'t> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, DenseMatrix> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.index].value)
    }

    pub fn value_owned(&self) -> DenseMatrix {
        self.value().clone()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.index)
    }

    /// Same value, recorded as a constant: gradients stop here.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value_owned())
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.value().map(f);
        let needs = self.requires_grad();
        self.tape.push(value, op, [self.index, NONE], needs)
    }

    fn binary(&self, other: Var<'t>, op: Op, value: DenseMatrix) -> Var<'t> {
        let needs = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, [self.index, other.index], needs)
    }

    fn elementwise(&self, other: Var<'t>, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        self.same_tape(&other);
        assert_eq!(
            self.shape(),
            other.shape(),
            "{name}: shape mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let value = zip_map(&self.value(), &other.value(), f);
        self.binary(other, op, value)
    }

    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        self.elementwise(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        self.elementwise(other, Op::Sub, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: Var<'t>) -> Var<'t> {
        self.elementwise(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg, |v| -v)
    }

    /// Adds a column vector to every column.
    pub fn add_column(&self, column: Var<'t>) -> Var<'t> {
        self.same_tape(&column);
        assert_eq!(
            (column.rows, column.cols),
            (self.rows, 1),
            "add_column: expected a {}x1 column, got {:?}",
            self.rows,
            column.shape()
        );
        let mut value = self.value_owned();
        {
            let c = column.value();
            for j in 0..value.cols() {
                for (v, b) in value.column_mut(j).iter_mut().zip(c.data()) {
                    *v += b;
                }
            }
        }
        self.binary(column, Op::AddColumn, value)
    }

    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        assert_eq!(
            self.cols, other.rows,
            "matmul: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let mut value = DenseMatrix::zeros(self.rows, other.cols);
        gemm(1.0, &self.value(), false, &other.value(), false, 0.0, &mut value);
        self.binary(other, Op::MatMul, value)
    }

    /// Matrix-vector product; `x` must be a column.
    pub fn matvec(&self, x: Var<'t>) -> Var<'t> {
        assert_eq!(x.cols, 1, "matvec: right operand must be a column vector");
        self.matmul(x)
    }

    pub fn transpose(&self) -> Var<'t> {
        let value = self.value().transpose();
        let needs = self.requires_grad();
        self.tape.push(value, Op::Transpose, [self.index, NONE], needs)
    }

    pub fn sum(&self) -> Var<'t> {
        let s: f64 = self.value().data().iter().sum();
        let needs = self.requires_grad();
        self.tape.push(DenseMatrix::scalar(s), Op::Sum, [self.index, NONE], needs)
    }

    pub fn mean(&self) -> Var<'t> {
        let v = self.value();
        assert!(!v.is_empty(), "mean of an empty matrix");
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        drop(v);
        let needs = self.requires_grad();
        self.tape.push(DenseMatrix::scalar(s), Op::Mean, [self.index, NONE], needs)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square, |v| v * v)
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(Op::Abs, f64::abs)
    }

    pub fn log(&self) -> Var<'t> {
        self.unary(Op::Log, f64::ln)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu, |v| v.max(0.0))
    }

    pub fn cos(&self) -> Var<'t> {
        self.unary(Op::Cos, f64::cos)
    }

    pub fn sin(&self) -> Var<'t> {
        self.unary(Op::Sin, f64::sin)
    }

    /// Multiplication by a fixed real.
    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(s), |v| v * s)
    }

    /// Multiplication by a scalar (`1x1`) var.
    pub fn scale_by(&self, s: Var<'t>) -> Var<'t> {
        self.same_tape(&s);
        assert_eq!(s.shape(), (1, 1), "scale_by: factor must be 1x1");
        let value = self.value().scale(s.item());
        s.binary(*self, Op::ScaleBy, value)
    }

    /// `sign(x)·max(|x| − θ, 0)` with a `1x1` threshold var.
    pub fn soft_threshold(&self, theta: Var<'t>) -> Var<'t> {
        self.same_tape(&theta);
        assert_eq!(theta.shape(), (1, 1), "soft_threshold: threshold must be 1x1");
        let t = theta.item();
        assert!(t >= 0.0, "soft_threshold: negative threshold {t}");
        let value = self.value().map(|v| soft_threshold_scalar(v, t));
        self.binary(theta, Op::SoftThreshold, value)
    }

    /// Soft threshold where, in every column, the `keep` entries of largest
    /// magnitude pass through untouched. The selected set is frozen on the
    /// forward values and treated as constant in the backward pass; ties break
    /// toward the lower row index.
    pub fn soft_threshold_top_k(&self, theta: Var<'t>, keep: usize) -> Var<'t> {
        self.same_tape(&theta);
        assert_eq!(theta.shape(), (1, 1), "soft_threshold_top_k: threshold must be 1x1");
        let t = theta.item();
        assert!(t >= 0.0, "soft_threshold_top_k: negative threshold {t}");
        let x = self.value_owned();
        let keep = keep.min(x.rows());
        let mut pass = vec![false; x.len()];
        let mut scratch = Vec::with_capacity(x.rows());
        for (j, mask) in pass.chunks_mut(x.rows().max(1)).enumerate().take(x.cols()) {
            crate::numerics::mark_top_k_abs(x.column(j), keep, &mut scratch, mask);
        }
        let data = x
            .data()
            .iter()
            .zip(&pass)
            .map(|(&v, &p)| if p { v } else { soft_threshold_scalar(v, t) })
            .collect();
        let value = DenseMatrix::from_raw(x.rows(), x.cols(), data);
        self.binary(theta, Op::SoftThresholdPassthrough(pass), value)
    }

    /// `rows x cols` matrix read from the column-major data of `self`
    /// starting at `offset`.
    pub fn window(&self, offset: usize, rows: usize, cols: usize) -> Var<'t> {
        let src = self.value();
        assert!(
            offset + rows * cols <= src.len(),
            "window [{offset}, {}) exceeds {} entries",
            offset + rows * cols,
            src.len()
        );
        let value = DenseMatrix::from_raw(rows, cols, src.data()[offset..offset + rows * cols].to_vec());
        drop(src);
        let needs = self.requires_grad();
        self.tape.push(value, Op::Window(offset), [self.index, NONE], needs)
    }

    /// Mean softmax cross-entropy; `self` holds one logit column per sample.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Var<'t> {
        assert_eq!(labels.len(), self.cols, "softmax_cross_entropy: one label per column");
        assert!(!labels.is_empty(), "softmax_cross_entropy: empty batch");
        let z = self.value();
        let mut total = 0.0;
        for (j, &label) in labels.iter().enumerate() {
            assert!(label < z.rows(), "label {label} out of range");
            let col = z.column(j);
            total += log_sum_exp(col) - col[label];
        }
        drop(z);
        let loss = total / labels.len() as f64;
        let needs = self.requires_grad();
        self.tape.push(
            DenseMatrix::scalar(loss),
            Op::SoftmaxCrossEntropy(labels.to_vec()),
            [self.index, NONE],
            needs,
        )
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(&self, rhs)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(&self, rhs)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(&self, rhs)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(&self)
    }
}
