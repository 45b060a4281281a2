use crate::numerics::{soft_threshold_scalar, DenseVector};

/// Operator plugged into PnP-ADMM in place of a proximal map.
pub trait Denoiser {
    fn denoise(&self, v: &[f64]) -> DenseVector;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, v: &[f64]) -> DenseVector {
        DenseVector::from(v)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SoftThresholdDenoiser {
    pub theta: f64,
}

impl Denoiser for SoftThresholdDenoiser {
    fn denoise(&self, v: &[f64]) -> DenseVector {
        DenseVector::from(v.iter().map(|&x| soft_threshold_scalar(x, self.theta)).collect::<Vec<_>>())
    }
}

/// Sliding median over a window of `2·radius + 1` entries, truncated at the ends.
#[derive(Debug, Clone, Copy)]
pub struct MedianFilterDenoiser {
    pub radius: usize,
}

impl Denoiser for MedianFilterDenoiser {
    fn denoise(&self, v: &[f64]) -> DenseVector {
        let n = v.len();
        let mut out = Vec::with_capacity(n);
        let mut window = Vec::with_capacity(2 * self.radius + 1);
        for i in 0..n {
            let lo = i.saturating_sub(self.radius);
            let hi = (i + self.radius + 1).min(n);
            window.clear();
            window.extend_from_slice(&v[lo..hi]);
            window.sort_by(f64::total_cmp);
            let k = window.len();
            out.push(if k % 2 == 1 {
                window[k / 2]
            } else {
                0.5 * (window[k / 2 - 1] + window[k / 2])
            });
        }
        DenseVector::from(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpState {
    pub x: DenseVector,
    pub y: DenseVector,
    pub u: DenseVector,
}

impl PnpState {
    pub fn zeros(n: usize) -> Self {
        Self {
            x: DenseVector::zeros(n),
            y: DenseVector::zeros(n),
            u: DenseVector::zeros(n),
        }
    }
}

/// One PnP-ADMM iteration:
/// `x⁺ = H(y − u)`, `y⁺ = prox_{αf}(x⁺ + u)`, `u⁺ = u + x⁺ − y⁺`.
///
/// `prox_f(v, α)` must return `prox_{αf}(v)`.
pub fn pnp_admm_step(
    s: PnpState,
    prox_f: &dyn Fn(&[f64], f64) -> DenseVector,
    denoiser: &dyn Denoiser,
    alpha: f64,
) -> PnpState {
    let x = denoiser.denoise(&s.y.sub(&s.u));
    let y = prox_f(&x.add(&s.u), alpha);
    let mut u = s.u;
    for ((ui, xi), yi) in u.iter_mut().zip(x.iter()).zip(y.iter()) {
        *ui += xi - yi;
    }
    PnpState { x, y, u }
}

/// `prox_{α·½‖·−b‖²}(v) = (v + αb)/(1 + α)`.
pub fn prox_least_squares(b: &[f64]) -> impl Fn(&[f64], f64) -> DenseVector + '_ {
    move |v, alpha| {
        DenseVector::from(
            v.iter()
                .zip(b)
                .map(|(vi, bi)| (vi + alpha * bi) / (1.0 + alpha))
                .collect::<Vec<_>>(),
        )
    }
}
