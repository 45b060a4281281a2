use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{
    cholesky, cholesky_solve, dot, spectral_norm_sq, DenseMatrix, DEFAULT_SPECTRAL_MAX_ITER, DEFAULT_SPECTRAL_TOL,
};

pub const DEFAULT_DEPTH: usize = 16;

/// Ridge added to `AAᵀ` when its Cholesky factorization fails.
pub const ALISTA_GRAM_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Lista,
    ListaCp,
    ListaCpss,
    Alista,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Lista, Variant::ListaCp, Variant::ListaCpss, Variant::Alista];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lista => "lista",
            Variant::ListaCp => "lista_cp",
            Variant::ListaCpss => "lista_cpss",
            Variant::Alista => "alista",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Lista => 0,
            Variant::ListaCp => 1,
            Variant::ListaCpss => 2,
            Variant::Alista => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown unrolled variant `{s}`")))
    }
}

/// Support-selection schedule: layer `k` (1-based) lets the
/// `⌊min(k·p_step, p_max)·n⌋` largest entries bypass the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportSchedule {
    pub p_step: f64,
    pub p_max: f64,
}

impl Default for SupportSchedule {
    fn default() -> Self {
        Self {
            p_step: 0.012,
            p_max: 0.12,
        }
    }
}

impl SupportSchedule {
    pub const EMPTY: SupportSchedule = SupportSchedule { p_step: 0.0, p_max: 0.0 };

    pub fn keep(&self, layer: usize, n: usize) -> usize {
        let frac = (layer as f64 * self.p_step).min(self.p_max).max(0.0);
        // the nudge keeps exact products such as 0.012·250 = 3 from flooring to 2
        ((frac * n as f64 + 1e-9).floor() as usize).min(n)
    }
}

/// Learnable quantities of one unrolled layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `x⁺ = η_θ(W_e b + S x)`.
    Lista { w_e: DenseMatrix, s: DenseMatrix, theta: f64 },
    /// `x⁺ = η_θ(x + W(b − Ax))`, also used with support selection.
    Coupled { w: DenseMatrix, theta: f64 },
    /// `x⁺ = η_θ(x − γ·Wᵀ(Ax − b))` with the shared analytic `W`.
    Alista { gamma: f64, theta: f64 },
}

impl Layer {
    pub fn theta(&self) -> f64 {
        match self {
            Layer::Lista { theta, .. } | Layer::Coupled { theta, .. } | Layer::Alista { theta, .. } => *theta,
        }
    }

    /// Mutable views of every learnable array, in a fixed order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Lista { w_e, s, theta } => vec![w_e.data_mut(), s.data_mut(), std::slice::from_mut(theta)],
            Layer::Coupled { w, theta } => vec![w.data_mut(), std::slice::from_mut(theta)],
            Layer::Alista { gamma, theta } => vec![std::slice::from_mut(gamma), std::slice::from_mut(theta)],
        }
    }

    pub fn learnable_count(&self) -> usize {
        match self {
            Layer::Lista { w_e, s, .. } => w_e.len() + s.len() + 1,
            Layer::Coupled { w, .. } => w.len() + 1,
            Layer::Alista { .. } => 2,
        }
    }

    pub(crate) fn clamp_theta(&mut self) {
        match self {
            Layer::Lista { theta, .. } | Layer::Coupled { theta, .. } | Layer::Alista { theta, .. } => {
                *theta = theta.max(0.0)
            }
        }
    }
}

/// A LISTA-family network: variant, per-layer parameters and the fixed
/// quantities its layers read.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledParams {
    pub variant: Variant,
    /// Measurement matrix (`m x n`).
    pub a: DenseMatrix,
    pub layers: Vec<Layer>,
    /// Analytic ALISTA weight (`m x n`), `None` for the other variants.
    pub alista_w: Option<DenseMatrix>,
    pub support: SupportSchedule,
    /// Set when the ALISTA Gram system needed the ridge.
    pub gram_regularized: bool,
}

impl UnrolledParams {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn learnable_count(&self) -> usize {
        self.layers.iter().map(Layer::learnable_count).sum()
    }

    /// Passthrough count of layer `k` (0-based); zero unless support selection is on.
    pub fn support_keep(&self, k: usize) -> usize {
        match self.variant {
            Variant::ListaCpss | Variant::Alista => self.support.keep(k + 1, self.n()),
            _ => 0,
        }
    }

    /// Keeps only the first `depth` layers.
    pub fn truncated(&self, depth: usize) -> UnrolledParams {
        let mut p = self.clone();
        p.layers.truncate(depth);
        p
    }
}

/// Parameters that make the network reproduce ISTA with step `1/L` and
/// threshold `λ/L`.
pub fn analytic_init(
    variant: Variant,
    a: &DenseMatrix,
    lambda: f64,
    depth: usize,
    support: SupportSchedule,
) -> Result<UnrolledParams> {
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!("lambda must be >= 0, got {lambda}")));
    }
    if depth == 0 {
        return Err(Error::contract("depth must be >= 1"));
    }
    let l = spectral_norm_sq(a, DEFAULT_SPECTRAL_TOL, DEFAULT_SPECTRAL_MAX_ITER)?;
    let theta = lambda / l;
    let at_over_l = a.transpose().scale(1.0 / l);
    let mut alista_w = None;
    let mut gram_regularized = false;
    let layer = match variant {
        Variant::Lista => {
            let mut s = a.gram().scale(-1.0 / l);
            for i in 0..s.rows() {
                s.set(i, i, s.get(i, i) + 1.0);
            }
            Layer::Lista {
                w_e: at_over_l,
                s,
                theta,
            }
        }
        Variant::ListaCp | Variant::ListaCpss => Layer::Coupled { w: at_over_l, theta },
        Variant::Alista => {
            let (w, flagged) = alista_weight(a)?;
            alista_w = Some(w);
            gram_regularized = flagged;
            Layer::Alista { gamma: 1.0, theta }
        }
    };
    Ok(UnrolledParams {
        variant,
        a: a.clone(),
        layers: vec![layer; depth],
        alista_w,
        support,
        gram_regularized,
    })
}

/// `W` (same shape as `A`) minimizing `‖WᵀA‖_F²` subject to `diag(WᵀA) = 1`.
///
/// Column `j` is `G⁻¹a_j / (a_jᵀG⁻¹a_j)` with `G = AAᵀ`. The flag reports
/// whether `G` had to be regularized by [`ALISTA_GRAM_RIDGE`].
pub fn alista_weight(a: &DenseMatrix) -> Result<(DenseMatrix, bool)> {
    let (m, n) = a.shape();
    if m > n {
        return Err(Error::contract(format!("alista_weight needs m <= n, got {m}x{n}")));
    }
    let g = a.outer_gram();
    let scale = (0..m).map(|i| g.get(i, i)).fold(0.0, f64::max);
    // pivots at rounding level mean G is numerically singular
    let well_posed = |c: &DenseMatrix| (0..m).all(|i| c.get(i, i) * c.get(i, i) > 1e-12 * scale);
    let (chol, regularized) = match cholesky(&g).filter(well_posed) {
        Some(c) => (c, false),
        None => {
            let mut r = g.clone();
            for i in 0..m {
                r.set(i, i, r.get(i, i) + ALISTA_GRAM_RIDGE);
            }
            let c = cholesky(&r).ok_or_else(|| Error::contract("AAᵀ + ridge is not positive definite"))?;
            (c, true)
        }
    };
    let mut w = DenseMatrix::zeros(m, n);
    for j in 0..n {
        let aj = a.column(j);
        let z = cholesky_solve(&chol, aj);
        let denom = dot(aj, &z);
        if !(denom > 0.0) {
            return Err(Error::contract(format!("column {j} of A is zero")));
        }
        for (wi, zi) in w.column_mut(j).iter_mut().zip(&z) {
            *wi = zi / denom;
        }
    }
    Ok((w, regularized))
}
