use crate::error::{Error, Result};
use crate::numerics::{norm_sq, DenseMatrix, RngStream};

/// Probability of a nonzero coordinate in a sparse ground-truth signal.
pub const SPARSITY: f64 = 0.1;

/// How the measurement matrix is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixKind {
    /// i.i.d. `N(0, 1/m)` entries.
    Incoherent,
    /// Columns `√ρ·u_g + √(1−ρ)·v_j` sharing one of `groups` directions `u_g`.
    Coherent { rho: f64, groups: usize },
}

/// `m x n` measurement matrix with unit-norm columns.
pub fn gen_measurement_matrix(rng: &mut RngStream, m: usize, n: usize, kind: MatrixKind) -> Result<DenseMatrix> {
    if m == 0 || m >= n {
        return Err(Error::contract(format!("measurement matrix needs 0 < m < n, got ({m}, {n})")));
    }
    let std = (1.0 / m as f64).sqrt();
    let mut a = match kind {
        MatrixKind::Incoherent => rng.normal_matrix(m, n, 0.0, std),
        MatrixKind::Coherent { rho, groups } => {
            if !(0.0..=1.0).contains(&rho) || groups == 0 {
                return Err(Error::contract(format!(
                    "coherent matrix needs rho in [0,1] and groups >= 1, got {rho}, {groups}"
                )));
            }
            let shared = rng.normal_matrix(m, groups, 0.0, std);
            let own = rng.normal_matrix(m, n, 0.0, std);
            let (ws, wo) = (rho.sqrt(), (1.0 - rho).sqrt());
            DenseMatrix::from_fn(m, n, |i, j| ws * shared.get(i, j % groups) + wo * own.get(i, j))
        }
    };
    for j in 0..n {
        let col = a.column_mut(j);
        let norm = norm_sq(col).sqrt();
        col.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(a)
}

/// Bernoulli(p)·N(0,1) signal.
pub fn sample_sparse_signal(rng: &mut RngStream, n: usize, p: f64) -> Vec<f64> {
    (0..n).map(|_| if rng.bernoulli(p) { rng.normal() } else { 0.0 }).collect()
}

/// One recovery problem: the shared matrix, its ground truth and measurements.
#[derive(Debug, Clone, Copy)]
pub struct SparseRecoveryInstance<'a> {
    pub a: &'a DenseMatrix,
    pub x_star: &'a [f64],
    pub b: &'a [f64],
    pub noise_snr_db: Option<f64>,
}

/// A batch of recovery instances sharing one measurement matrix, stored
/// column-wise: column `q` of `x_star` and `b` belongs to instance `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRecoverySuite {
    pub a: DenseMatrix,
    pub x_star: DenseMatrix,
    pub b: DenseMatrix,
    pub noise_snr_db: Option<f64>,
    /// Number of all-zero signals that were redrawn.
    pub resampled: usize,
}

impl SparseRecoverySuite {
    pub fn len(&self) -> usize {
        self.x_star.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn instance(&self, q: usize) -> SparseRecoveryInstance<'_> {
        SparseRecoveryInstance {
            a: &self.a,
            x_star: self.x_star.column(q),
            b: self.b.column(q),
            noise_snr_db: self.noise_snr_db,
        }
    }

    /// Sub-suite made of the listed instances.
    pub fn select(&self, idx: &[usize]) -> SparseRecoverySuite {
        SparseRecoverySuite {
            a: self.a.clone(),
            x_star: self.x_star.select_columns(idx),
            b: self.b.select_columns(idx),
            noise_snr_db: self.noise_snr_db,
            resampled: 0,
        }
    }
}

/// Draws `count` instances `b = A x* + ε`.
///
/// With `snr_db` set, `ε` is Gaussian and rescaled per instance so that
/// `10·log10(‖Ax*‖²/‖ε‖²) = snr_db` exactly. All-zero signals are redrawn.
pub fn gen_sparse_instances(
    rng: &mut RngStream,
    a: &DenseMatrix,
    count: usize,
    snr_db: Option<f64>,
) -> Result<SparseRecoverySuite> {
    if count == 0 {
        return Err(Error::contract("instance count must be >= 1"));
    }
    let (m, n) = a.shape();
    let mut x_star = Vec::with_capacity(n * count);
    let mut b = Vec::with_capacity(m * count);
    let mut resampled = 0;
    for _ in 0..count {
        let x = loop {
            let x = sample_sparse_signal(rng, n, SPARSITY);
            if x.iter().any(|&v| v != 0.0) {
                break x;
            }
            resampled += 1;
        };
        let mut y = a.matvec(&x)?.into_inner();
        if let Some(snr) = snr_db {
            let noise = rng.normal_vec(m, 0.0, 1.0);
            let scale = (norm_sq(&y) / (norm_sq(&noise) * 10f64.powf(snr / 10.0))).sqrt();
            for (yi, ei) in y.iter_mut().zip(&noise) {
                *yi += scale * ei;
            }
        }
        x_star.extend(x);
        b.extend(y);
    }
    Ok(SparseRecoverySuite {
        a: a.clone(),
        x_star: DenseMatrix::from_col_major(n, count, x_star)?,
        b: DenseMatrix::from_col_major(m, count, b)?,
        noise_snr_db: snr_db,
        resampled,
    })
}

/// `10·log10(‖Ax*‖² / ‖b − Ax*‖²)` of a stored instance.
pub fn measured_snr_db(inst: &SparseRecoveryInstance<'_>) -> Result<f64> {
    let clean = inst.a.matvec(inst.x_star)?;
    let noise = clean.sub(inst.b);
    Ok(10.0 * (clean.norm_sq() / noise.norm_sq()).log10())
}
