//! Dense linear algebra, seeded random streams and scalar nonlinearities.

mod dense;
mod rng;

pub use dense::{dot, gemm, norm_sq, DenseMatrix, DenseVector};
pub use rng::{sample_gaussian, RngStream, RNG_ALGORITHM};

use crate::error::{Error, Result};

/// Seed reserved for the power-iteration start vector, so the spectral
/// estimate is a deterministic function of the matrix alone.
pub const POWER_ITERATION_SEED: u64 = 0x5EED_0F_1A3B_D0E5;

pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-12;
pub const DEFAULT_SPECTRAL_MAX_ITER: usize = 100_000;

/// Largest eigenvalue of `AᵀA` by power iteration.
///
/// Iterates on the smaller of the two Gram matrices (`AAᵀ` when `m ≤ n`),
/// which share their nonzero spectrum. Stops once the eigen-residual
/// `‖Gv − λv‖` falls below `tol·λ`, which bounds the distance from `λ` to
/// the spectrum by the same amount.
pub fn spectral_norm_sq(a: &DenseMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::contract("spectral_norm_sq requires tol > 0"));
    }
    if a.data().iter().all(|&v| v == 0.0) {
        return Err(Error::contract("spectral_norm_sq of a zero matrix"));
    }
    let gram = if a.rows() <= a.cols() { a.outer_gram() } else { a.gram() };
    let n = gram.rows();
    let mut rng = RngStream::new(POWER_ITERATION_SEED);
    let mut v = rng.normal_vec(n, 0.0, 1.0);
    normalize(&mut v);
    let mut w = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        gram.matvec_into(&v, &mut w);
        estimate = dot(&v, &w);
        let residual: f64 = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - estimate * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * estimate.abs() {
            return Ok(estimate);
        }
        let norm = norm_sq(&w).sqrt();
        if norm == 0.0 {
            // start vector fell in the null space; restart from a fresh draw
            v = rng.normal_vec(n, 0.0, 1.0);
            normalize(&mut v);
            continue;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        estimate,
    })
}

fn normalize(v: &mut [f64]) {
    let n = norm_sq(v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

#[inline]
pub fn soft_threshold_scalar(x: f64, theta: f64) -> f64 {
    if x > theta {
        x - theta
    } else if x < -theta {
        x + theta
    } else {
        0.0
    }
}

/// Elementwise `sign(x)·max(|x| − θ, 0)`.
pub fn soft_threshold(x: &[f64], theta: f64) -> Result<DenseVector> {
    if !(theta >= 0.0) {
        return Err(Error::contract(format!("soft threshold must be >= 0, got {theta}")));
    }
    Ok(DenseVector::from(
        x.iter().map(|&v| soft_threshold_scalar(v, theta)).collect::<Vec<_>>(),
    ))
}

/// Sets `mask[i]` for the `keep` largest `|col[i]|`, ties going to the lower
/// index. `scratch` is reused between calls.
pub fn mark_top_k_abs(col: &[f64], keep: usize, scratch: &mut Vec<usize>, mask: &mut [bool]) {
    let keep = keep.min(col.len());
    if keep == 0 {
        return;
    }
    scratch.clear();
    scratch.extend(0..col.len());
    scratch.select_nth_unstable_by(keep - 1, |&p, &q| col[q].abs().total_cmp(&col[p].abs()).then(p.cmp(&q)));
    for &i in &scratch[..keep] {
        mask[i] = true;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sign` with `sign(0) = 0`.
#[inline]
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky(a: &DenseMatrix) -> Option<DenseMatrix> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "cholesky of a non-square matrix");
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor `L`.
pub fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.get(k, i) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_simple_matrices() {
        let l = spectral_norm_sq(&DenseMatrix::identity(3), 1e-12, 1000).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let l = spectral_norm_sq(&DenseMatrix::diag(&[3.0, 1.0]), 1e-12, 1000).unwrap();
        assert!((l - 9.0).abs() < 1e-10);
    }

    #[test]
    fn spectral_norm_matches_eigendecomposition() {
        let mut rng = RngStream::new(31);
        for (m, n) in [(5, 10), (20, 20), (64, 128), (30, 7)] {
            let a = rng.normal_matrix(m, n, 0.0, 1.0);
            let na = nalgebra::DMatrix::from_column_slice(m, n, a.data());
            let oracle = (na.transpose() * &na).symmetric_eigenvalues().max();
            let l = spectral_norm_sq(&a, DEFAULT_SPECTRAL_TOL, DEFAULT_SPECTRAL_MAX_ITER).unwrap();
            assert!((l - oracle).abs() <= DEFAULT_SPECTRAL_TOL * oracle, "{l} vs {oracle}");
        }
    }

    #[test]
    fn spectral_norm_rejects_zero_and_bad_tol() {
        assert!(spectral_norm_sq(&DenseMatrix::zeros(2, 3), 1e-12, 10).is_err());
        assert!(spectral_norm_sq(&DenseMatrix::identity(2), 0.0, 10).is_err());
    }

    #[test]
    fn spectral_norm_reports_non_convergence() {
        // two nearly equal top eigenvalues make power iteration crawl
        let a = DenseMatrix::diag(&[1.0, 0.999_999, 0.5]);
        match spectral_norm_sq(&a, 1e-15, 3) {
            Err(Error::NonConvergence { iterations, estimate }) => {
                assert_eq!(iterations, 3);
                assert!(estimate > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn soft_threshold_examples() {
        let y = soft_threshold(&[1.2, -0.3], 0.5).unwrap();
        assert!((y[0] - 0.7).abs() < 1e-15);
        assert_eq!(y[1], 0.0);
        let x = [0.3, -2.0, 0.0];
        assert_eq!(soft_threshold(&x, 0.0).unwrap().as_slice(), &x);
        assert!(soft_threshold(&[0.0; 4], 3.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(soft_threshold(&x, -0.1).is_err());
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = DenseMatrix::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, &[1.0, 2.0, 3.0]);
        let back = a.matvec(&x).unwrap();
        assert!(back.max_abs_diff(&[1.0, 2.0, 3.0]) < 1e-12);
        assert!(cholesky(&DenseMatrix::diag(&[1.0, 0.0])).is_none());
    }

    proptest::proptest! {
        #[test]
        fn top_k_selection_matches_full_sort(
            col in proptest::collection::vec(-3i32..=3, 1..40),
            keep in 0usize..45,
        ) {
            // small integer values force many ties
            let col: Vec<f64> = col.into_iter().map(f64::from).collect();
            let mut order: Vec<usize> = (0..col.len()).collect();
            order.sort_by(|&p, &q| col[q].abs().total_cmp(&col[p].abs()).then(p.cmp(&q)));
            let mut expect = vec![false; col.len()];
            for &i in &order[..keep.min(col.len())] {
                expect[i] = true;
            }
            let mut mask = vec![false; col.len()];
            mark_top_k_abs(&col, keep, &mut Vec::new(), &mut mask);
            proptest::prop_assert_eq!(mask, expect);
        }
    }
}
