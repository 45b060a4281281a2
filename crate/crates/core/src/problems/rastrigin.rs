use std::f64::consts::PI;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector, RngStream};

pub const DEFAULT_ALPHA: f64 = 10.0;

/// `f(x) = ½‖Ax − b‖² − α Σ cᵢ cos(2πxᵢ) + αn`.
#[derive(Debug, Clone, PartialEq)]
pub struct RastriginInstance {
    pub a: DenseMatrix,
    pub b: DenseVector,
    pub c: DenseVector,
    pub alpha: f64,
}

impl RastriginInstance {
    pub fn new(a: DenseMatrix, b: DenseVector, c: DenseVector, alpha: f64) -> Result<Self> {
        let n = a.cols();
        if a.rows() != n || b.len() != n || c.len() != n {
            return Err(Error::dims("RastriginInstance", n, format!("{:?}/{}/{}", a.shape(), b.len(), c.len())));
        }
        Ok(Self { a, b, c, alpha })
    }

    /// The classic function: `A = I`, `b = 0`, `c = 1`.
    pub fn classic(n: usize) -> Self {
        Self {
            a: DenseMatrix::identity(n),
            b: DenseVector::zeros(n),
            c: DenseVector::filled(n, 1.0),
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    fn residual(&self, x: &[f64]) -> DenseVector {
        let mut r = self.a.matvec(x).expect("x has n entries");
        for (ri, bi) in r.iter_mut().zip(self.b.iter()) {
            *ri -= bi;
        }
        r
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = self.residual(x);
        let osc: f64 = self.c.iter().zip(x).map(|(ci, xi)| ci * (2.0 * PI * xi).cos()).sum();
        0.5 * r.norm_sq() - self.alpha * osc + self.alpha * self.dim() as f64
    }

    /// `Aᵀ(Ax − b) + 2πα c ⊙ sin(2πx)`.
    pub fn grad(&self, x: &[f64]) -> DenseVector {
        let r = self.residual(x);
        let mut g = self.a.matvec_t(&r).expect("residual has n entries");
        for ((gi, ci), xi) in g.iter_mut().zip(self.c.iter()).zip(x) {
            *gi += 2.0 * PI * self.alpha * ci * (2.0 * PI * xi).sin();
        }
        g
    }

    pub fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let a = tape.constant(self.a.clone());
        let b = tape.constant(DenseMatrix::column_vector(&self.b));
        let c = tape.constant(DenseMatrix::column_vector(&self.c));
        let quad = (a.matmul(x) - b).square().sum().scale(0.5);
        let osc = (c * x.scale(2.0 * PI).cos()).sum().scale(-self.alpha);
        let offset = tape.constant_scalar(self.alpha * self.dim() as f64);
        quad + osc + offset
    }
}

pub fn rastrigin_value_and_grad(r: &RastriginInstance, x: &[f64]) -> Result<(f64, DenseVector)> {
    if x.len() != r.dim() {
        return Err(Error::dims("rastrigin_value_and_grad", r.dim(), x.len()));
    }
    Ok((r.value(x), r.grad(x)))
}

/// `count` instances with `A`, `b`, `c` entries i.i.d. `N(0,1)` and `α = 10`.
pub fn gen_rastrigin_suite(rng: &mut RngStream, n: usize, count: usize) -> Vec<RastriginInstance> {
    (0..count)
        .map(|_| {
            let a = rng.normal_matrix(n, n, 0.0, 1.0);
            let b = DenseVector::from(rng.normal_vec(n, 0.0, 1.0));
            let c = DenseVector::from(rng.normal_vec(n, 0.0, 1.0));
            RastriginInstance {
                a,
                b,
                c,
                alpha: DEFAULT_ALPHA,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classic_reference(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        0.5 * x.iter().map(|v| v * v).sum::<f64>() - x.iter().map(|v| 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
            + 10.0 * n
    }

    #[test]
    fn classic_minimum_and_half_point() {
        let r = RastriginInstance::classic(3);
        let (v, g) = rastrigin_value_and_grad(&r, &[0.0; 3]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let r1 = RastriginInstance::classic(1);
        assert!((r1.value(&[0.5]) - 20.125).abs() < 1e-12);
    }

    #[test]
    fn family_special_case_matches_classic() {
        let mut rng = RngStream::new(1);
        let r = RastriginInstance::classic(4);
        for _ in 0..1000 {
            let x = rng.normal_vec(4, 0.0, 3.0);
            assert!((r.value(&x) - classic_reference(&x)).abs() <= 1e-12 * (1.0 + classic_reference(&x).abs()));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(2);
        for r in gen_rastrigin_suite(&mut rng, 5, 10) {
            let x = rng.normal_vec(5, 0.0, 1.0);
            let g = r.grad(&x);
            for k in 0..5 {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fd = (r.value(&xp) - r.value(&xm)) / (2.0 * h);
                assert!((g[k] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {}", g[k], fd);
            }
        }
    }

    #[test]
    fn tape_recording_matches_closed_form() {
        let mut rng = RngStream::new(3);
        let r = &gen_rastrigin_suite(&mut rng, 3, 1)[0];
        let x = rng.normal_vec(3, 0.0, 1.0);
        let tape = Tape::new();
        let xv = tape.var(DenseMatrix::column_vector(&x));
        let f = r.record(&tape, xv);
        assert!((f.item() - r.value(&x)).abs() < 1e-12);
        let g = tape.backward(f).unwrap().wrt(xv);
        assert!(r.grad(&x).max_abs_diff(g.data()) < 1e-10);
    }

    #[test]
    fn suite_is_deterministic_and_sized() {
        let a = gen_rastrigin_suite(&mut RngStream::new(4), 2, 1280);
        let b = gen_rastrigin_suite(&mut RngStream::new(4), 2, 1280);
        assert_eq!(a.len(), 1280);
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.alpha == 10.0));
        assert_eq!(gen_rastrigin_suite(&mut RngStream::new(5), 10, 128).len(), 128);
    }

    #[test]
    fn classic_constructor_fields() {
        let r = RastriginInstance::classic(2);
        assert_eq!(r.a, DenseMatrix::identity(2));
        assert_eq!(r.b.as_slice(), &[0.0, 0.0]);
        assert_eq!(r.c.as_slice(), &[1.0, 1.0]);
    }
}
