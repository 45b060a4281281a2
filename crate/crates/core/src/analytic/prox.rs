use crate::error::Result;
use crate::numerics::{soft_threshold_scalar, spectral_norm_sq, DenseVector, DEFAULT_SPECTRAL_MAX_ITER, DEFAULT_SPECTRAL_TOL};
use crate::problems::LassoProblem;

/// Iterate of ISTA/FISTA with its momentum point and step bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxState {
    pub x: DenseVector,
    /// FISTA momentum point `y_k` (equal to `x` for ISTA).
    pub y: DenseVector,
    pub t: f64,
    /// Largest eigenvalue of `AᵀA`.
    pub lipschitz: f64,
}

impl ProxState {
    pub fn new(x0: DenseVector, lipschitz: f64) -> Self {
        assert!(lipschitz > 0.0, "ProxState needs L > 0");
        Self {
            y: x0.clone(),
            x: x0,
            t: 1.0,
            lipschitz,
        }
    }

    /// Zero start with `L` computed from the problem's dictionary.
    pub fn for_problem(p: &LassoProblem<'_>) -> Result<Self> {
        let l = spectral_norm_sq(p.a, DEFAULT_SPECTRAL_TOL, DEFAULT_SPECTRAL_MAX_ITER)?;
        Ok(Self::new(DenseVector::zeros(p.dim()), l))
    }
}

/// `η_{λ/L}(z − (1/L)Aᵀ(Az − b))`.
fn prox_grad(p: &LassoProblem<'_>, z: &[f64], l: f64) -> DenseVector {
    let g = p.smooth_grad(z);
    let theta = p.lambda / l;
    DenseVector::from(
        z.iter()
            .zip(g.iter())
            .map(|(zi, gi)| soft_threshold_scalar(zi - gi / l, theta))
            .collect::<Vec<_>>(),
    )
}

pub fn ista_step(p: &LassoProblem<'_>, s: ProxState) -> ProxState {
    let x = prox_grad(p, &s.x, s.lipschitz);
    ProxState {
        y: x.clone(),
        x,
        t: s.t,
        lipschitz: s.lipschitz,
    }
}

/// Prox-gradient step at the momentum point, then
/// `t⁺ = (1 + √(1 + 4t²))/2` and `y⁺ = x⁺ + ((t − 1)/t⁺)(x⁺ − x)`.
pub fn fista_step(p: &LassoProblem<'_>, s: ProxState) -> ProxState {
    let x_next = prox_grad(p, &s.y, s.lipschitz);
    let t_next = next_fista_t(s.t);
    let w = (s.t - 1.0) / t_next;
    let y = DenseVector::from(
        x_next
            .iter()
            .zip(s.x.iter())
            .map(|(xn, xo)| xn + w * (xn - xo))
            .collect::<Vec<_>>(),
    );
    ProxState {
        x: x_next,
        y,
        t: t_next,
        lipschitz: s.lipschitz,
    }
}

#[inline]
pub fn next_fista_t(t: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
}

/// Runs `iters` FISTA steps from zero and returns the final iterate.
pub fn fista_solve(p: &LassoProblem<'_>, lipschitz: f64, iters: usize) -> DenseVector {
    let mut s = ProxState::new(DenseVector::zeros(p.dim()), lipschitz);
    for _ in 0..iters {
        s = fista_step(p, s);
    }
    s.x
}

/// Reference optimum `f*` used by the relative-loss metric.
pub const REFERENCE_FISTA_ITERS: usize = 2000;

pub fn lasso_reference_optimum(p: &LassoProblem<'_>, lipschitz: f64) -> f64 {
    p.value(&fista_solve(p, lipschitz, REFERENCE_FISTA_ITERS))
}
