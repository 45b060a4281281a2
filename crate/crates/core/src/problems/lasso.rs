use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{norm_sq, sign0, DenseMatrix, DenseVector};

pub const DEFAULT_LAMBDA: f64 = 0.005;

/// `½‖Ax − b‖² + λ‖x‖₁`.
#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub a: &'a DenseMatrix,
    pub b: &'a [f64],
    pub lambda: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(a: &'a DenseMatrix, b: &'a [f64], lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::contract(format!("LASSO needs lambda > 0, got {lambda}")));
        }
        if b.len() != a.rows() {
            return Err(Error::dims("LassoProblem", a.rows(), b.len()));
        }
        Ok(Self { a, b, lambda })
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = self.residual(x);
        0.5 * norm_sq(&r) + self.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Gradient of the smooth part, `Aᵀ(Ax − b)`.
    pub fn smooth_grad(&self, x: &[f64]) -> DenseVector {
        let r = self.residual(x);
        self.a.matvec_t(&r).expect("residual has m entries")
    }

    fn residual(&self, x: &[f64]) -> DenseVector {
        let mut r = self.a.matvec(x).expect("x has n entries");
        for (ri, bi) in r.iter_mut().zip(self.b) {
            *ri -= bi;
        }
        r
    }

    /// Records the objective of `x` (an `n x 1` var) on a tape.
    pub fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let a = tape.constant(self.a.clone());
        let b = tape.constant(DenseMatrix::column_vector(self.b));
        let r = a.matmul(x) - b;
        r.square().sum().scale(0.5) + x.abs().sum().scale(self.lambda)
    }
}

/// Value and subgradient (`sign(0) = 0`) of the LASSO objective.
pub fn lasso_value_and_subgrad(p: &LassoProblem<'_>, x: &[f64]) -> Result<(f64, DenseVector)> {
    if x.len() != p.dim() {
        return Err(Error::dims("lasso_value_and_subgrad", p.dim(), x.len()));
    }
    let mut g = p.smooth_grad(x);
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi += p.lambda * sign0(*xi);
    }
    Ok((p.value(x), g))
}

/// LASSO instances sharing one dictionary; column `q` of `b` is instance `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoSuite {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub lambda: f64,
}

impl LassoSuite {
    pub fn len(&self) -> usize {
        self.b.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn problem(&self, q: usize) -> LassoProblem<'_> {
        LassoProblem {
            a: &self.a,
            b: self.b.column(q),
            lambda: self.lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::numerics::RngStream;

    #[test]
    fn value_and_subgrad_at_origin() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0, 0.0], &[0.0, -1.0, 3.0]]).unwrap();
        let b = [1.0, 2.0];
        let p = LassoProblem::new(&a, &b, 0.1).unwrap();
        let (v, g) = lasso_value_and_subgrad(&p, &[0.0; 3]).unwrap();
        assert_eq!(v, 0.5 * 5.0);
        let atb = a.matvec_t(&b).unwrap();
        for k in 0..3 {
            assert_eq!(g[k], -atb[k]);
        }
    }

    #[test]
    fn one_dimensional_value() {
        let a = DenseMatrix::from_rows(&[&[1.0]]).unwrap();
        let p = LassoProblem::new(&a, &[1.0], 0.5).unwrap();
        let (v, _) = lasso_value_and_subgrad(&p, &[0.5]).unwrap();
        assert_eq!(v, 0.375);
    }

    #[test]
    fn rejects_bad_input() {
        let a = DenseMatrix::identity(2);
        assert!(LassoProblem::new(&a, &[1.0, 1.0], 0.0).is_err());
        assert!(LassoProblem::new(&a, &[1.0], 0.1).is_err());
        let p = LassoProblem::new(&a, &[1.0, 1.0], 0.1).unwrap();
        assert!(lasso_value_and_subgrad(&p, &[1.0]).is_err());
    }

    #[test]
    fn subgradient_agrees_with_tape_away_from_kinks() {
        let mut rng = RngStream::new(8);
        let a = rng.normal_matrix(5, 10, 0.0, 1.0);
        let b = rng.normal_vec(5, 0.0, 1.0);
        let p = LassoProblem::new(&a, &b, DEFAULT_LAMBDA).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = loop {
                let x = rng.normal_vec(10, 0.0, 1.0);
                if x.iter().all(|v| v.abs() > 1e-4) {
                    break x;
                }
            };
            let (v, g) = lasso_value_and_subgrad(&p, &x).unwrap();
            let tape = Tape::new();
            let xv = tape.var(DenseMatrix::column_vector(&x));
            let loss = p.record(&tape, xv);
            assert!((loss.item() - v).abs() <= 1e-10 * (1.0 + v.abs()));
            let ad = tape.backward(loss).unwrap().wrt(xv);
            for k in 0..10 {
                assert!((ad.data()[k] - g[k]).abs() <= 1e-10 * (1.0 + g[k].abs()));
            }
        }
    }
}
