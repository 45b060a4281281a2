use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector, RngStream};

use super::optimizee::Optimizee;

/// `f(c ⊙ θ)` for a fixed coordinatewise scale `c`.
#[derive(Debug, Clone)]
pub struct ScaledOptimizee<O> {
    pub inner: O,
    pub scale: DenseVector,
}

impl<O: Optimizee> ScaledOptimizee<O> {
    pub fn new(inner: O, scale: DenseVector) -> Self {
        assert_eq!(inner.dim(), scale.len(), "scale sized for a different optimizee");
        Self { inner, scale }
    }

    fn scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.scale.iter()).map(|(a, c)| a * c).collect()
    }
}

/// Wraps `inner` with `c_i = exp(u_i)`, `u_i ~ U(−1, 1)`.
pub fn random_scaling_wrap<O: Optimizee>(inner: O, rng: &mut RngStream) -> ScaledOptimizee<O> {
    let c = (0..inner.dim()).map(|_| rng.uniform_range(-1.0, 1.0).exp()).collect::<Vec<_>>();
    ScaledOptimizee::new(inner, DenseVector::from(c))
}

impl<O: Optimizee> Optimizee for ScaledOptimizee<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(&self.scaled(x))
    }

    fn grad(&self, x: &[f64]) -> DenseVector {
        let g = self.inner.grad(&self.scaled(x));
        DenseVector::from(g.iter().zip(self.scale.iter()).map(|(a, c)| a * c).collect::<Vec<_>>())
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let c = tape.constant(DenseMatrix::column_vector(&self.scale));
        self.inner.record(tape, x * c)
    }

    fn advance(&mut self, rng: &mut RngStream) {
        self.inner.advance(rng)
    }
}

/// `f(θ) + μ‖θ − θ*‖²`.
#[derive(Debug, Clone)]
pub struct ConvexAugmented<O> {
    pub inner: O,
    pub mu: f64,
    pub anchor: DenseVector,
}

/// Adds the convex term with weight `mu` around `anchor`.
pub fn convex_augment<O: Optimizee>(inner: O, mu: f64, anchor: DenseVector) -> Result<ConvexAugmented<O>> {
    if !(mu >= 0.0) {
        return Err(Error::contract(format!("convex term weight must be >= 0, got {mu}")));
    }
    if anchor.len() != inner.dim() {
        return Err(Error::dims("convex_augment", inner.dim(), anchor.len()));
    }
    Ok(ConvexAugmented { inner, mu, anchor })
}

impl<O: Optimizee> Optimizee for ConvexAugmented<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x) + self.mu * self.anchor.sub(x).norm_sq()
    }

    fn grad(&self, x: &[f64]) -> DenseVector {
        let mut g = self.inner.grad(x);
        for ((gi, xi), ai) in g.iter_mut().zip(x).zip(self.anchor.iter()) {
            *gi += 2.0 * self.mu * (xi - ai);
        }
        g
    }

    fn record<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let anchor = tape.constant(DenseMatrix::column_vector(&self.anchor));
        self.inner.record(tape, x) + (x - anchor).square().sum().scale(self.mu)
    }

    fn advance(&mut self, rng: &mut RngStream) {
        self.inner.advance(rng)
    }
}

/// The two smoothed-gradient estimators and their merge.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedGrads {
    /// Reparameterized estimator: mean of `∇f(θ + n_s)`.
    pub g_rp: DenseVector,
    /// Score-function estimator: mean of `f(θ̃_s)(θ̃_s − θ)/σ²`.
    pub g_es: DenseVector,
    /// Inverse-variance weighted combination.
    pub g_merged: DenseVector,
    pub var_rp: f64,
    pub var_es: f64,
}

/// Combines two estimates with weights proportional to `1/var`; falls back
/// to the plain average when both variances vanish.
pub fn merge_estimates(g_rp: &[f64], var_rp: f64, g_es: &[f64], var_es: f64) -> DenseVector {
    let avg = || DenseVector::from(g_rp.iter().zip(g_es).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>());
    match (var_rp > 0.0, var_es > 0.0) {
        (false, false) => avg(),
        (false, true) => DenseVector::from(g_rp),
        (true, false) => DenseVector::from(g_es),
        (true, true) => {
            let (w_rp, w_es) = (1.0 / var_rp, 1.0 / var_es);
            let z = w_rp + w_es;
            DenseVector::from(
                g_rp.iter()
                    .zip(g_es)
                    .map(|(a, b)| (a * w_rp + b * w_es) / z)
                    .collect::<Vec<_>>(),
            )
        }
    }
}

/// Mean and empirical variance trace of per-sample vectors.
fn mean_and_trace(samples: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let s = samples.len() as f64;
    let n = samples[0].len();
    let mut mean = vec![0.0; n];
    for v in samples {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / s;
        }
    }
    let trace = samples
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum::<f64>()
        / (s - 1.0);
    (mean, trace)
}

/// Gaussian-smoothed gradient estimates of `f` at `theta` from `samples`
/// perturbations of standard deviation `sigma` each.
pub fn es_smoothed_grads<O: Optimizee + ?Sized>(
    f: &O,
    theta: &[f64],
    samples: usize,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<SmoothedGrads> {
    if samples < 2 {
        return Err(Error::contract("smoothed gradients need at least 2 samples"));
    }
    if !(sigma > 0.0) {
        return Err(Error::contract(format!("smoothing sigma must be > 0, got {sigma}")));
    }
    let n = theta.len();
    let mut rp = Vec::with_capacity(samples);
    let mut es = Vec::with_capacity(samples);
    for _ in 0..samples {
        let noise = rng.normal_vec(n, 0.0, sigma);
        let shifted: Vec<f64> = theta.iter().zip(&noise).map(|(t, e)| t + e).collect();
        rp.push(f.grad(&shifted).into_inner());
        let fv = f.value(&shifted);
        es.push(noise.iter().map(|e| fv * e / (sigma * sigma)).collect());
    }
    let (g_rp, var_rp) = mean_and_trace(&rp);
    let (g_es, var_es) = mean_and_trace(&es);
    let g_merged = merge_estimates(&g_rp, var_rp, &g_es, var_es);
    Ok(SmoothedGrads {
        g_rp: g_rp.into(),
        g_es: g_es.into(),
        g_merged,
        var_rp,
        var_es,
    })
}

/// Unroll length for `epoch`: linear from `t_min` at epoch 0 to `t_max` at
/// the last epoch, rounded down.
pub fn progressive_unroll_schedule(epoch: usize, epochs: usize, t_min: usize, t_max: usize) -> usize {
    if epochs <= 1 || t_max <= t_min {
        return t_min.max(1);
    }
    let frac = epoch.min(epochs - 1) as f64 / (epochs - 1) as f64;
    let t = t_min as f64 + frac * (t_max - t_min) as f64;
    (t.floor() as usize).clamp(t_min, t_max).max(1)
}
