use super::{Tape, Var};
use crate::numerics::DenseMatrix;

/// Central-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-6;

/// Largest `|g_AD − g_FD| / (1 + |g_FD|)` over all coordinates of `point`,
/// with `g_FD` from central differences of step [`GRAD_CHECK_STEP`].
pub fn grad_check<F>(f: F, point: &DenseMatrix) -> f64
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point))
}

/// [`grad_check`] over several inputs at once; the error is the maximum over
/// every coordinate of every input.
pub fn grad_check_many<F>(f: F, points: &[DenseMatrix]) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let analytic: Vec<DenseMatrix> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = points.iter().map(|p| tape.var(p.clone())).collect();
        let loss = f(&tape, &vars);
        let grads = tape.backward(loss).expect("grad_check needs a scalar program");
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let eval = |inputs: &[DenseMatrix]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        f(&tape, &vars).item()
    };

    let mut worst: f64 = 0.0;
    let mut probe: Vec<DenseMatrix> = points.to_vec();
    for (which, point) in points.iter().enumerate() {
        for k in 0..point.len() {
            let x0 = point.data()[k];
            probe[which].data_mut()[k] = x0 + GRAD_CHECK_STEP;
            let up = eval(&probe);
            probe[which].data_mut()[k] = x0 - GRAD_CHECK_STEP;
            let down = eval(&probe);
            probe[which].data_mut()[k] = x0;
            let fd = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let ad = analytic[which].data()[k];
            worst = worst.max((ad - fd).abs() / (1.0 + fd.abs()));
        }
    }
    worst
}
