use crate::autodiff::{Tape, Var};
use crate::numerics::{gemm, sigmoid, DenseMatrix, RngStream};

pub const DEFAULT_HIDDEN: usize = 20;
pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_KAPPA: f64 = 0.1;
/// Scale `p` of the gradient preprocessing.
pub const DEFAULT_PREPROCESS_P: f64 = 10.0;
/// Features fed to the first LSTM layer per coordinate.
pub const INPUT_FEATURES: usize = 2;

/// `(log|g|/p, sign g)` when `|g| ≥ e^{−p}`, otherwise `(−1, e^p·g)`.
pub fn preprocess_grad(g: f64, p: f64) -> (f64, f64) {
    debug_assert!(p > 0.0);
    if g.abs() >= (-p).exp() {
        (g.abs().ln() / p, g.signum())
    } else {
        (-1.0, p.exp() * g)
    }
}

/// `2 x n` matrix of preprocessed features, one column per coordinate.
pub fn preprocess_column(grads: &[f64], p: f64) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(INPUT_FEATURES, grads.len());
    for (j, &g) in grads.iter().enumerate() {
        let (a, b) = preprocess_grad(g, p);
        out.set(0, j, a);
        out.set(1, j, b);
    }
    out
}

/// Gate order inside [`LstmLayer`] arrays: input, forget, cell, output.
const GATES: usize = 4;

/// One LSTM layer: `W_q` (`H x in`), `U_q` (`H x H`) and `b_q` (`H x 1`) per gate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w: [DenseMatrix; GATES],
    pub u: [DenseMatrix; GATES],
    pub b: [DenseMatrix; GATES],
}

/// Coordinatewise LSTM optimizer: one weight set shared by every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmOptimizerParams {
    pub hidden: usize,
    pub layers: Vec<LstmLayer>,
    /// Output projection (`1 x H`), no bias.
    pub w_out: DenseMatrix,
    pub kappa: f64,
    pub preprocess_p: f64,
}

impl LstmOptimizerParams {
    /// Gaussian weights with standard deviation `1/√H`, forget-gate bias 1,
    /// other biases 0.
    pub fn init(rng: &mut RngStream, hidden: usize, layers: usize) -> Self {
        assert!(hidden >= 1 && layers >= 1, "LSTM needs at least one unit and one layer");
        let std = 1.0 / (hidden as f64).sqrt();
        let layers = (0..layers)
            .map(|l| {
                let input = if l == 0 { INPUT_FEATURES } else { hidden };
                LstmLayer {
                    w: std::array::from_fn(|_| rng.normal_matrix(hidden, input, 0.0, std)),
                    u: std::array::from_fn(|_| rng.normal_matrix(hidden, hidden, 0.0, std)),
                    b: std::array::from_fn(|q| DenseMatrix::filled(hidden, 1, if q == 1 { 1.0 } else { 0.0 })),
                }
            })
            .collect();
        Self {
            hidden,
            layers,
            w_out: rng.normal_matrix(1, hidden, 0.0, std),
            kappa: DEFAULT_KAPPA,
            preprocess_p: DEFAULT_PREPROCESS_P,
        }
    }

    pub fn default_init(rng: &mut RngStream) -> Self {
        Self::init(rng, DEFAULT_HIDDEN, DEFAULT_LAYERS)
    }

    /// Every learnable array in a fixed order (layer by layer `W`, `U`, `b`
    /// per gate, then the output projection).
    pub fn arrays(&self) -> Vec<&DenseMatrix> {
        let mut out: Vec<&DenseMatrix> = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.u.iter());
            out.extend(l.b.iter());
        }
        out.push(&self.w_out);
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out: Vec<&mut DenseMatrix> = Vec::new();
        for l in &mut self.layers {
            out.extend(l.w.iter_mut());
            out.extend(l.u.iter_mut());
            out.extend(l.b.iter_mut());
        }
        out.push(&mut self.w_out);
        out
    }

    pub fn learnable_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }
}

/// Per-layer `(h, c)`, each `H x n` with one column per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateStates {
    pub h: Vec<DenseMatrix>,
    pub c: Vec<DenseMatrix>,
}

impl CoordinateStates {
    pub fn zeros(params: &LstmOptimizerParams, n: usize) -> Self {
        let z = DenseMatrix::zeros(params.hidden, n);
        Self {
            h: vec![z.clone(); params.layers.len()],
            c: vec![z; params.layers.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.h.first().map_or(0, |m| m.cols())
    }

    /// Same states with coordinates reordered: column `j` of the result is
    /// column `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            h: self.h.iter().map(|m| m.select_columns(perm)).collect(),
            c: self.c.iter().map(|m| m.select_columns(perm)).collect(),
        }
    }
}

fn affine(w: &DenseMatrix, x: &DenseMatrix, u: &DenseMatrix, h: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = x.cols();
    let mut wx = DenseMatrix::zeros(w.rows(), n);
    gemm(1.0, w, false, x, false, 0.0, &mut wx);
    let mut uh = DenseMatrix::zeros(u.rows(), n);
    gemm(1.0, u, false, h, false, 0.0, &mut uh);
    wx.axpy(1.0, &uh);
    for j in 0..n {
        for (v, bi) in wx.column_mut(j).iter_mut().zip(b.data()) {
            *v += bi;
        }
    }
    wx
}

fn zip(a: &DenseMatrix, b: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| f(a.get(i, j), b.get(i, j)))
}

/// Proposed update for every coordinate and the advanced states.
///
/// Mirrors [`lstm_step_tape`] operation for operation so both paths produce
/// identical values.
pub fn lstm_optimizer_step(
    params: &LstmOptimizerParams,
    states: &CoordinateStates,
    grads: &[f64],
) -> (Vec<f64>, CoordinateStates) {
    assert_eq!(states.dim(), grads.len(), "states sized for a different optimizee");
    let mut input = preprocess_column(grads, params.preprocess_p);
    let mut next = states.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let h = &states.h[l];
        let gate = |q: usize| affine(&layer.w[q], &input, &layer.u[q], h, &layer.b[q]);
        let i = gate(0).map(sigmoid);
        let f = gate(1).map(sigmoid);
        let g = gate(2).map(f64::tanh);
        let o = gate(3).map(sigmoid);
        let fc = zip(&f, &states.c[l], |a, b| a * b);
        let ig = zip(&i, &g, |a, b| a * b);
        let c = zip(&fc, &ig, |a, b| a + b);
        let h_new = zip(&o, &c.map(f64::tanh), |a, b| a * b);
        next.c[l] = c;
        next.h[l] = h_new.clone();
        input = h_new;
    }
    let mut out = DenseMatrix::zeros(1, grads.len());
    gemm(1.0, &params.w_out, false, &input, false, 0.0, &mut out);
    let update = out.data().iter().map(|v| v * params.kappa).collect();
    (update, next)
}

/// LSTM weights on a tape, as leaves or constants.
#[derive(Debug, Clone)]
pub struct LstmVars<'t> {
    pub w: Vec<[Var<'t>; GATES]>,
    pub u: Vec<[Var<'t>; GATES]>,
    pub b: Vec<[Var<'t>; GATES]>,
    pub w_out: Var<'t>,
    pub kappa: f64,
    pub preprocess_p: f64,
}

impl<'t> LstmVars<'t> {
    pub fn record(tape: &'t Tape, params: &LstmOptimizerParams, trainable: bool) -> Self {
        let put = |m: &DenseMatrix| if trainable { tape.var(m.clone()) } else { tape.constant(m.clone()) };
        Self {
            w: params.layers.iter().map(|l| std::array::from_fn(|q| put(&l.w[q]))).collect(),
            u: params.layers.iter().map(|l| std::array::from_fn(|q| put(&l.u[q]))).collect(),
            b: params.layers.iter().map(|l| std::array::from_fn(|q| put(&l.b[q]))).collect(),
            w_out: put(&params.w_out),
            kappa: params.kappa,
            preprocess_p: params.preprocess_p,
        }
    }

    /// Handles in the order of [`LstmOptimizerParams::arrays`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for l in 0..self.w.len() {
            out.extend(self.w[l]);
            out.extend(self.u[l]);
            out.extend(self.b[l]);
        }
        out.push(self.w_out);
        out
    }
}

/// Tape states: per-layer `(h, c)` vars.
#[derive(Debug, Clone)]
pub struct TapeStates<'t> {
    pub h: Vec<Var<'t>>,
    pub c: Vec<Var<'t>>,
}

impl<'t> TapeStates<'t> {
    /// Constants holding the given state values (gradients cut).
    pub fn constants(tape: &'t Tape, s: &CoordinateStates) -> Self {
        Self {
            h: s.h.iter().map(|m| tape.constant(m.clone())).collect(),
            c: s.c.iter().map(|m| tape.constant(m.clone())).collect(),
        }
    }

    pub fn values(&self) -> CoordinateStates {
        CoordinateStates {
            h: self.h.iter().map(|v| v.value_owned()).collect(),
            c: self.c.iter().map(|v| v.value_owned()).collect(),
        }
    }
}

/// Recorded LSTM step; `input` is the preprocessed `2 x n` feature matrix.
/// Returns the update as an `n x 1` column.
pub fn lstm_step_tape<'t>(lv: &LstmVars<'t>, states: &TapeStates<'t>, input: Var<'t>) -> (Var<'t>, TapeStates<'t>) {
    let mut x = input;
    let mut next = states.clone();
    for l in 0..lv.w.len() {
        let h = states.h[l];
        let gate = |q: usize| (lv.w[l][q].matmul(x) + lv.u[l][q].matmul(h)).add_column(lv.b[l][q]);
        let i = gate(0).sigmoid();
        let f = gate(1).sigmoid();
        let g = gate(2).tanh();
        let o = gate(3).sigmoid();
        let c = f * states.c[l] + i * g;
        let h_new = o * c.tanh();
        next.c[l] = c;
        next.h[l] = h_new;
        x = h_new;
    }
    let update = lv.w_out.matmul(x).scale(lv.kappa).transpose();
    (update, next)
}
