use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Lower clamp applied when the error ratio underflows.
pub const NMSE_FLOOR_DB: f64 = -150.0;

fn ratio_db(err: f64, energy: f64) -> f64 {
    if err == 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * (err / energy).log10()).max(NMSE_FLOOR_DB)
}

/// `10·log10(‖x̂ − x*‖² / ‖x*‖²)`.
pub fn nmse_db(x_hat: &[f64], x_star: &[f64]) -> Result<f64> {
    if x_hat.len() != x_star.len() {
        return Err(Error::dims("nmse_db", x_star.len(), x_hat.len()));
    }
    let energy: f64 = x_star.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::contract("nmse_db: reference signal is zero"));
    }
    let err: f64 = x_hat.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ratio_db(err, energy))
}

/// Suite NMSE over matching columns: total squared error over total signal
/// energy, in dB.
pub fn suite_nmse_db(x_hat: &DenseMatrix, x_star: &DenseMatrix) -> Result<f64> {
    if x_hat.shape() != x_star.shape() {
        return Err(Error::contract(format!(
            "suite_nmse_db: shapes {:?} and {:?} differ",
            x_hat.shape(),
            x_star.shape()
        )));
    }
    let energy = x_star.frobenius_sq();
    if energy == 0.0 {
        return Err(Error::contract("suite_nmse_db: reference signals are all zero"));
    }
    let err: f64 = x_hat
        .data()
        .iter()
        .zip(x_star.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(ratio_db(err, energy))
}
