use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{gemm, mark_top_k_abs, soft_threshold_scalar, DenseMatrix};

use super::params::{Layer, UnrolledParams, Variant};

/// Runs the network on the columns of `b` (`m x N`) from `x⁰ = 0` and returns
/// the iterates `x¹ … x^K`.
pub fn forward(params: &UnrolledParams, b: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    let mut out = Vec::with_capacity(params.depth());
    forward_each(params, b, params.depth(), |x| out.push(x.clone()))?;
    Ok(out)
}

/// Final iterate only.
pub fn forward_final(params: &UnrolledParams, b: &DenseMatrix) -> Result<DenseMatrix> {
    forward_prefix(params, b, params.depth())
}

/// `x^depth`, computed without keeping the intermediate iterates.
pub fn forward_prefix(params: &UnrolledParams, b: &DenseMatrix, depth: usize) -> Result<DenseMatrix> {
    let mut last = DenseMatrix::zeros(params.n(), b.cols());
    forward_each(params, b, depth, |x| last = x.clone())?;
    Ok(last)
}

fn forward_each(
    params: &UnrolledParams,
    b: &DenseMatrix,
    depth: usize,
    mut visit: impl FnMut(&DenseMatrix),
) -> Result<()> {
    if b.rows() != params.m() {
        return Err(Error::dims("unrolled forward", params.m(), b.rows()));
    }
    if depth > params.depth() {
        return Err(Error::contract(format!(
            "requested {depth} layers of a {}-layer network",
            params.depth()
        )));
    }
    let mut x = DenseMatrix::zeros(params.n(), b.cols());
    for k in 0..depth {
        x = layer_step(params, k, b, &x);
        visit(&x);
    }
    Ok(())
}

/// One layer on plain matrices; mirrors [`record_layer`] operation for operation.
pub fn layer_step(params: &UnrolledParams, k: usize, b: &DenseMatrix, x: &DenseMatrix) -> DenseMatrix {
    let (n, cols) = (params.n(), b.cols());
    let a = &params.a;
    let (z, theta) = match &params.layers[k] {
        Layer::Lista { w_e, s, theta } => {
            let mut wb = DenseMatrix::zeros(n, cols);
            gemm(1.0, w_e, false, b, false, 0.0, &mut wb);
            let mut sx = DenseMatrix::zeros(n, cols);
            gemm(1.0, s, false, x, false, 0.0, &mut sx);
            (add(&wb, &sx), *theta)
        }
        Layer::Coupled { w, theta } => {
            let mut ax = DenseMatrix::zeros(a.rows(), cols);
            gemm(1.0, a, false, x, false, 0.0, &mut ax);
            let r = sub(b, &ax);
            let mut wr = DenseMatrix::zeros(n, cols);
            gemm(1.0, w, false, &r, false, 0.0, &mut wr);
            (add(x, &wr), *theta)
        }
        Layer::Alista { gamma, theta } => {
            let w = params.alista_w.as_ref().expect("ALISTA network without analytic weight");
            let mut ax = DenseMatrix::zeros(a.rows(), cols);
            gemm(1.0, a, false, x, false, 0.0, &mut ax);
            let r = sub(&ax, b);
            let mut wtr = DenseMatrix::zeros(n, cols);
            gemm(1.0, w, true, &r, false, 0.0, &mut wtr);
            (sub(x, &wtr.scale(*gamma)), *theta)
        }
    };
    threshold(&z, theta, params.support_keep(k))
}

fn add(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = a.clone();
    out.axpy(1.0, b);
    out
}

fn sub(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) - b.get(i, j))
}

/// Soft threshold where the `keep` largest-magnitude entries of every column
/// pass through (ties toward the lower row index).
pub fn threshold(z: &DenseMatrix, theta: f64, keep: usize) -> DenseMatrix {
    if keep == 0 {
        return z.map(|v| soft_threshold_scalar(v, theta));
    }
    let keep = keep.min(z.rows());
    let mut out = z.clone();
    let mut scratch = Vec::with_capacity(z.rows());
    let mut pass = vec![false; z.rows()];
    for j in 0..z.cols() {
        pass.iter_mut().for_each(|p| *p = false);
        mark_top_k_abs(z.column(j), keep, &mut scratch, &mut pass);
        for (i, v) in out.column_mut(j).iter_mut().enumerate() {
            if !pass[i] {
                *v = soft_threshold_scalar(*v, theta);
            }
        }
    }
    out
}

/// Tape handles for one layer's parameters, trainable or frozen.
#[derive(Debug, Clone, Copy)]
pub enum LayerVars<'t> {
    Lista { w_e: Var<'t>, s: Var<'t>, theta: Var<'t> },
    Coupled { w: Var<'t>, theta: Var<'t> },
    Alista { gamma: Var<'t>, theta: Var<'t> },
}

impl<'t> LayerVars<'t> {
    /// Records `layer` as leaves (`trainable`) or constants.
    pub fn record(tape: &'t Tape, layer: &Layer, trainable: bool) -> Self {
        let put = |m: DenseMatrix| if trainable { tape.var(m) } else { tape.constant(m) };
        match layer {
            Layer::Lista { w_e, s, theta } => LayerVars::Lista {
                w_e: put(w_e.clone()),
                s: put(s.clone()),
                theta: put(DenseMatrix::scalar(*theta)),
            },
            Layer::Coupled { w, theta } => LayerVars::Coupled {
                w: put(w.clone()),
                theta: put(DenseMatrix::scalar(*theta)),
            },
            Layer::Alista { gamma, theta } => LayerVars::Alista {
                gamma: put(DenseMatrix::scalar(*gamma)),
                theta: put(DenseMatrix::scalar(*theta)),
            },
        }
    }

    /// Handles in the order of [`Layer::slices_mut`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        match *self {
            LayerVars::Lista { w_e, s, theta } => vec![w_e, s, theta],
            LayerVars::Coupled { w, theta } => vec![w, theta],
            LayerVars::Alista { gamma, theta } => vec![gamma, theta],
        }
    }
}

/// Fixed operands shared by every recorded layer.
#[derive(Debug, Clone, Copy)]
pub struct TapeOperands<'t> {
    pub a: Var<'t>,
    /// `Wᵀ` of ALISTA (`n x m`).
    pub w_t: Option<Var<'t>>,
    pub b: Var<'t>,
}

impl<'t> TapeOperands<'t> {
    pub fn record(tape: &'t Tape, params: &UnrolledParams, b: &DenseMatrix) -> Self {
        Self {
            a: tape.constant(params.a.clone()),
            w_t: params.alista_w.as_ref().map(|w| tape.constant(w.transpose())),
            b: tape.constant(b.clone()),
        }
    }
}

/// Records layer `k` applied to `x`.
pub fn record_layer<'t>(
    params: &UnrolledParams,
    k: usize,
    ops: &TapeOperands<'t>,
    lv: &LayerVars<'t>,
    x: Var<'t>,
) -> Var<'t> {
    let keep = params.support_keep(k);
    let (z, theta) = match *lv {
        LayerVars::Lista { w_e, s, theta } => (w_e.matmul(ops.b) + s.matmul(x), theta),
        LayerVars::Coupled { w, theta } => {
            let r = ops.b - ops.a.matmul(x);
            (x + w.matmul(r), theta)
        }
        LayerVars::Alista { gamma, theta } => {
            let w_t = ops.w_t.expect("ALISTA network without analytic weight");
            let r = ops.a.matmul(x) - ops.b;
            (x - w_t.matmul(r).scale_by(gamma), theta)
        }
    };
    debug_assert!(keep == 0 || matches!(params.variant, Variant::ListaCpss | Variant::Alista));
    if keep == 0 {
        z.soft_threshold(theta)
    } else {
        z.soft_threshold_top_k(theta, keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{ista_step, ProxState};
    use crate::numerics::{spectral_norm_sq, DenseVector, RngStream};
    use crate::problems::{gen_measurement_matrix, gen_sparse_instances, LassoProblem, MatrixKind};
    use crate::unrolled::{analytic_init, SupportSchedule};

    #[test]
    fn analytic_lista_follows_ista_per_layer() {
        let mut rng = RngStream::new(10);
        let a = gen_measurement_matrix(&mut rng, 10, 20, MatrixKind::Incoherent).unwrap();
        let suite = gen_sparse_instances(&mut rng, &a, 20, None).unwrap();
        let lambda = 0.1;
        let l = spectral_norm_sq(&a, 1e-12, 100_000).unwrap();
        for variant in [Variant::Lista, Variant::ListaCp] {
            let params = analytic_init(variant, &a, lambda, 32, SupportSchedule::default()).unwrap();
            let iterates = forward(&params, &suite.b).unwrap();
            for q in 0..suite.len() {
                let p = LassoProblem::new(&a, suite.instance(q).b, lambda).unwrap();
                let mut s = ProxState::new(DenseVector::zeros(20), l);
                for x in &iterates {
                    s = ista_step(&p, s);
                    let diff = s.x.max_abs_diff(x.column(q));
                    assert!(diff <= 1e-10, "{variant}: {diff}");
                }
            }
        }
    }

    #[test]
    fn cpss_without_support_equals_cp() {
        let mut rng = RngStream::new(11);
        let a = gen_measurement_matrix(&mut rng, 8, 16, MatrixKind::Incoherent).unwrap();
        let suite = gen_sparse_instances(&mut rng, &a, 10, None).unwrap();
        let mut cp = analytic_init(Variant::ListaCp, &a, 0.05, 8, SupportSchedule::default()).unwrap();
        for layer in cp.layers.iter_mut() {
            for s in layer.slices_mut() {
                for v in s.iter_mut() {
                    *v += 0.01 * rng.normal();
                }
            }
            layer.clamp_theta();
        }
        let mut cpss = cp.clone();
        cpss.variant = Variant::ListaCpss;
        cpss.support = SupportSchedule::EMPTY;
        assert_eq!(forward(&cp, &suite.b).unwrap(), forward(&cpss, &suite.b).unwrap());
    }

    #[test]
    fn zero_measurements_give_zero_output() {
        let mut rng = RngStream::new(12);
        let a = gen_measurement_matrix(&mut rng, 6, 12, MatrixKind::Incoherent).unwrap();
        let b = DenseMatrix::zeros(6, 3);
        for v in Variant::ALL {
            let p = analytic_init(v, &a, 0.1, 5, SupportSchedule::default()).unwrap();
            let x = forward_final(&p, &b).unwrap();
            assert!(x.data().iter().all(|&e| e == 0.0), "{v}");
        }
    }

    #[test]
    fn tape_matches_numeric_forward() {
        let mut rng = RngStream::new(13);
        let a = gen_measurement_matrix(&mut rng, 8, 16, MatrixKind::Incoherent).unwrap();
        let suite = gen_sparse_instances(&mut rng, &a, 6, None).unwrap();
        for v in Variant::ALL {
            let p = analytic_init(v, &a, 0.1, 6, SupportSchedule::default()).unwrap();
            let numeric = forward_final(&p, &suite.b).unwrap();
            let tape = Tape::new();
            let ops = TapeOperands::record(&tape, &p, &suite.b);
            let mut x = tape.constant(DenseMatrix::zeros(16, 6));
            for k in 0..p.depth() {
                let lv = LayerVars::record(&tape, &p.layers[k], true);
                x = record_layer(&p, k, &ops, &lv, x);
            }
            assert_eq!(x.value_owned(), numeric, "{v}");
        }
    }

    #[test]
    fn threshold_keeps_largest_entries() {
        let z = DenseMatrix::from_rows(&[&[3.0, 0.5], &[-0.2, -4.0], &[1.0, 0.5]]).unwrap();
        let out = threshold(&z, 0.6, 1);
        assert_eq!(out, DenseMatrix::from_rows(&[&[3.0, 0.0], &[0.0, -4.0], &[0.4, 0.0]]).unwrap());
    }
}
