use crate::numerics::{norm_sq, DenseVector};

/// Which update rule a [`FirstOrderState`] is driven by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstOrderMethod {
    Gd,
    GdLineSearch,
    Nag,
    Adam,
    RmsProp,
}

/// Iterate plus the buffers every first-order method may need.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderState {
    pub x: DenseVector,
    pub method: FirstOrderMethod,
    /// First moment (Adam).
    pub m: DenseVector,
    /// Second moment (Adam, RMSProp).
    pub v: DenseVector,
    /// Previous iterate (NAG).
    pub x_prev: DenseVector,
    /// Completed steps.
    pub t: u64,
}

impl FirstOrderState {
    pub fn new(x: DenseVector, method: FirstOrderMethod) -> Self {
        let n = x.len();
        Self {
            x_prev: x.clone(),
            x,
            method,
            m: DenseVector::zeros(n),
            v: DenseVector::zeros(n),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl RmsPropConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay: 0.9,
            eps: 1e-8,
        }
    }
}

/// Backtracking (Armijo) parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub init_step: f64,
    /// Sufficient-decrease constant.
    pub c: f64,
    pub shrink: f64,
    pub max_halvings: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            init_step: 0.1,
            c: 1e-4,
            shrink: 0.5,
            max_halvings: 50,
        }
    }
}

/// Result of a line-searched step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    /// Accepted step length (0 when stalled).
    pub step: f64,
    pub stalled: bool,
}

/// One Adam update on raw slices; `t` is the 1-based index of this step.
pub fn adam_update(x: &mut [f64], m: &mut [f64], v: &mut [f64], t: u64, grad: &[f64], cfg: &AdamConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..x.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        x[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn rmsprop_update(x: &mut [f64], v: &mut [f64], grad: &[f64], cfg: &RmsPropConfig) {
    for i in 0..x.len() {
        let g = grad[i];
        v[i] = cfg.decay * v[i] + (1.0 - cfg.decay) * g * g;
        x[i] -= cfg.lr * g / (v[i].sqrt() + cfg.eps);
    }
}

/// `x ← x − lr·grad`.
pub fn gd_step(mut s: FirstOrderState, grad: &[f64], lr: f64) -> FirstOrderState {
    assert!(lr > 0.0, "gd_step needs lr > 0");
    s.x.axpy(-lr, grad);
    s.t += 1;
    s
}

pub fn adam_step(mut s: FirstOrderState, grad: &[f64], cfg: &AdamConfig) -> FirstOrderState {
    s.t += 1;
    adam_update(&mut s.x, &mut s.m, &mut s.v, s.t, grad, cfg);
    s
}

pub fn rmsprop_step(mut s: FirstOrderState, grad: &[f64], cfg: &RmsPropConfig) -> FirstOrderState {
    s.t += 1;
    rmsprop_update(&mut s.x, &mut s.v, grad, cfg);
    s
}

/// Backtracks from `from` along `-grad` until the Armijo condition holds.
fn backtrack(
    from: &[f64],
    f_from: f64,
    grad: &[f64],
    objective: &dyn Fn(&[f64]) -> f64,
    cfg: &LineSearchConfig,
) -> Option<(DenseVector, f64)> {
    let g2 = norm_sq(grad);
    let mut step = cfg.init_step;
    let mut trial = DenseVector::zeros(from.len());
    for _ in 0..=cfg.max_halvings {
        for ((t, x), g) in trial.iter_mut().zip(from).zip(grad) {
            *t = x - step * g;
        }
        let f_trial = objective(&trial);
        if f_trial <= f_from - cfg.c * step * g2 {
            return Some((trial, step));
        }
        step *= cfg.shrink;
    }
    None
}

/// Gradient descent with a backtracked step started from `cfg.init_step`.
pub fn gd_line_search_step(
    mut s: FirstOrderState,
    objective: &dyn Fn(&[f64]) -> f64,
    grad: &[f64],
    cfg: &LineSearchConfig,
) -> (FirstOrderState, LineSearchOutcome) {
    s.t += 1;
    let f0 = objective(&s.x);
    match backtrack(&s.x, f0, grad, objective, cfg) {
        Some((x, step)) => {
            s.x_prev = std::mem::replace(&mut s.x, x);
            (s, LineSearchOutcome { step, stalled: false })
        }
        None => (s, LineSearchOutcome { step: 0.0, stalled: true }),
    }
}

/// Nesterov step with a backtracked step size.
///
/// The probe is `y = x + (k−1)/(k+2)·(x − x_prev)` for the `k`-th step since the
/// last restart; the gradient is evaluated there and backtracked against
/// `f(y)`. If the result is worse than `x`, the momentum counter restarts and a
/// plain backtracked gradient step from `x` is taken instead, so accepted
/// objective values never increase.
pub fn nag_line_search_step(
    mut s: FirstOrderState,
    objective: &dyn Fn(&[f64]) -> f64,
    gradient: &dyn Fn(&[f64]) -> DenseVector,
    cfg: &LineSearchConfig,
) -> (FirstOrderState, LineSearchOutcome) {
    s.t += 1;
    let k = s.t as f64;
    let beta = (k - 1.0) / (k + 2.0);
    let f_x = objective(&s.x);
    if beta > 0.0 {
        let mut probe = s.x.clone();
        probe.axpy(beta, &s.x.sub(&s.x_prev));
        let f_probe = objective(&probe);
        if f_probe.is_finite() {
            let g = gradient(&probe);
            if let Some((x, step)) = backtrack(&probe, f_probe, &g, objective, cfg) {
                if objective(&x) <= f_x {
                    s.x_prev = std::mem::replace(&mut s.x, x);
                    return (s, LineSearchOutcome { step, stalled: false });
                }
            }
        }
        s.t = 1;
    }
    let g = gradient(&s.x);
    match backtrack(&s.x, f_x, &g, objective, cfg) {
        Some((x, step)) => {
            s.x_prev = std::mem::replace(&mut s.x, x);
            (s, LineSearchOutcome { step, stalled: false })
        }
        None => {
            s.x_prev = s.x.clone();
            (s, LineSearchOutcome { step: 0.0, stalled: true })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn state(x: &[f64], m: FirstOrderMethod) -> FirstOrderState {
        FirstOrderState::new(DenseVector::from(x.to_vec()), m)
    }

    #[test]
    fn gd_examples() {
        let s = gd_step(state(&[1.0, 1.0], FirstOrderMethod::Gd), &[1.0, 1.0], 0.5);
        assert_eq!(s.x.as_slice(), &[0.5, 0.5]);
        let s = gd_step(state(&[3.0, -2.0], FirstOrderMethod::Gd), &[0.0, 0.0], 0.1);
        assert_eq!(s.x.as_slice(), &[3.0, -2.0]);
        // ½x² with lr 1 lands on the minimizer
        let x0 = [4.0, -7.0];
        let s = gd_step(state(&x0, FirstOrderMethod::Gd), &x0, 1.0);
        assert_eq!(s.x.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = AdamConfig::with_lr(0.01);
        let g = [3.0, -0.002, 150.0];
        let s = adam_step(state(&[0.0; 3], FirstOrderMethod::Adam), &g, &cfg);
        for (xi, gi) in s.x.iter().zip(g) {
            assert!((xi + 0.01 * gi.signum()).abs() < 1e-7, "{xi}");
        }
    }

    #[test]
    fn rmsprop_stationary_step_is_signed_lr() {
        let cfg = RmsPropConfig::with_lr(0.01);
        let mut s = state(&[0.0], FirstOrderMethod::RmsProp);
        for _ in 0..500 {
            let before = s.x[0];
            s = rmsprop_step(s, &[-2.5], &cfg);
            let step = s.x[0] - before;
            if s.t == 500 {
                assert!((step - 0.01).abs() < 1e-9, "{step}");
            }
        }
    }

    #[test]
    fn adam_on_half_square_contracts() {
        // independent scalar run of the same recursion ends at x ≈ 2.94e-3
        let cfg = AdamConfig::with_lr(0.1);
        let mut s = state(&[1.0], FirstOrderMethod::Adam);
        for _ in 0..100 {
            let g = s.x.clone();
            s = adam_step(s, &g, &cfg);
        }
        assert!(s.x[0].abs() < 0.05, "{}", s.x[0]);
    }

    #[test]
    fn moment_updates_match_scalar_reference() {
        let mut rng = RngStream::new(10);
        let adam = AdamConfig::with_lr(0.05);
        let rms = RmsPropConfig::with_lr(0.3);
        for _ in 0..1000 {
            let x = rng.normal();
            let m = rng.normal();
            let v = rng.uniform() * 3.0;
            let g = rng.normal() * 5.0;
            let t = 1 + rng.index(50) as u64;

            // reference Adam
            let m_ref = 0.9 * m + 0.1 * g;
            let v_ref = 0.999 * v + 0.001 * g * g;
            let mh = m_ref / (1.0 - 0.9f64.powi(t as i32));
            let vh = v_ref / (1.0 - 0.999f64.powi(t as i32));
            let x_ref = x - 0.05 * mh / (vh.sqrt() + 1e-8);
            let (mut xs, mut ms, mut vs) = ([x], [m], [v]);
            adam_update(&mut xs, &mut ms, &mut vs, t, &[g], &adam);
            assert!((xs[0] - x_ref).abs() <= 1e-14 * (1.0 + x_ref.abs()));
            assert!((ms[0] - m_ref).abs() <= 1e-14 * (1.0 + m_ref.abs()));
            assert!((vs[0] - v_ref).abs() <= 1e-14 * (1.0 + v_ref.abs()));

            // reference RMSProp
            let v_ref = 0.9 * v + 0.1 * g * g;
            let x_ref = x - 0.3 * g / (v_ref.sqrt() + 1e-8);
            let (mut xs, mut vs) = ([x], [v]);
            rmsprop_update(&mut xs, &mut vs, &[g], &rms);
            assert!((xs[0] - x_ref).abs() <= 1e-14 * (1.0 + x_ref.abs()));
            assert!((vs[0] - v_ref).abs() <= 1e-14 * (1.0 + v_ref.abs()));
        }
    }

    fn quadratic() -> (impl Fn(&[f64]) -> f64, impl Fn(&[f64]) -> DenseVector) {
        // f = ½ xᵀ diag(1, 10, 100) x
        let d = [1.0, 10.0, 100.0];
        let f = move |x: &[f64]| 0.5 * x.iter().zip(d).map(|(v, di)| di * v * v).sum::<f64>();
        let g = move |x: &[f64]| DenseVector::from(x.iter().zip(d).map(|(v, di)| di * v).collect::<Vec<_>>());
        (f, g)
    }

    #[test]
    fn nag_objective_never_increases_on_convex_quadratic() {
        let (f, g) = quadratic();
        let mut s = state(&[1.0, -1.0, 0.5], FirstOrderMethod::Nag);
        let mut last = f(&s.x);
        for _ in 0..100 {
            let (next, out) = nag_line_search_step(s, &f, &g, &LineSearchConfig::default());
            assert!(!out.stalled);
            let now = f(&next.x);
            assert!(now <= last, "{now} > {last}");
            last = now;
            s = next;
        }
        let mut gd = state(&[1.0, -1.0, 0.5], FirstOrderMethod::GdLineSearch);
        for _ in 0..100 {
            let grad = g(&gd.x);
            gd = gd_line_search_step(gd, &f, &grad, &LineSearchConfig::default()).0;
        }
        assert!(last < f(&gd.x), "nag {last} vs gd {}", f(&gd.x));
    }

    #[test]
    fn nag_with_zero_gradient_stays_put() {
        let f = |_: &[f64]| 1.0;
        let g = |x: &[f64]| DenseVector::zeros(x.len());
        let s = state(&[2.0, 3.0], FirstOrderMethod::Nag);
        let (s, out) = nag_line_search_step(s, &f, &g, &LineSearchConfig::default());
        assert_eq!(s.x.as_slice(), &[2.0, 3.0]);
        assert!(!out.stalled);
    }

    #[test]
    fn initial_step_accepted_when_armijo_holds_immediately() {
        // ½‖x‖²: step 0.1 gives f·0.81 ≤ f − 1e-4·0.1·‖x‖²
        let f = |x: &[f64]| 0.5 * norm_sq(x);
        let g = |x: &[f64]| DenseVector::from(x);
        let s = state(&[0.3, 0.1, 0.01], FirstOrderMethod::Nag);
        let (s2, out) = nag_line_search_step(s.clone(), &f, &g, &LineSearchConfig::default());
        assert_eq!(out.step, 0.1);
        let mut expect = s.x.clone();
        expect.axpy(-0.1, &g(&s.x));
        assert_eq!(s2.x, expect);
    }

    #[test]
    fn line_search_stalls_on_ascent_direction() {
        // objective that increases along −grad regardless of step
        let f = |x: &[f64]| -x[0];
        let g = |_: &[f64]| DenseVector::from(vec![1.0]);
        let s = state(&[0.0], FirstOrderMethod::GdLineSearch);
        let (s, out) = gd_line_search_step(s, &f, &g(&[0.0]), &LineSearchConfig::default());
        assert!(out.stalled);
        assert_eq!(s.x.as_slice(), &[0.0]);
        let s = state(&[0.0], FirstOrderMethod::Nag);
        let (s, out) = nag_line_search_step(s, &f, &g, &LineSearchConfig::default());
        assert!(out.stalled);
        assert_eq!(s.x.as_slice(), &[0.0]);
    }
}
