//! Seeded random streams.
//!
//! Every stream is a ChaCha20 keystream (20 rounds, 64-bit block counter)
//! keyed from a `u64` seed. Uniforms take the top 53 bits of each output
//! word; normals use the Box–Muller transform evaluated with `libm` so the
//! produced sequence does not depend on the platform's math library.

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::dense::{DenseMatrix, DenseVector};
use crate::error::{Error, Result};

/// Identifier of the generator behind [`RngStream`].
pub const RNG_ALGORITHM: &str = "chacha20-boxmuller-v1";

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for a parallel worker: seed = master seed + worker index.
    pub fn for_worker(master_seed: u64, worker: u64) -> Self {
        Self::new(master_seed.wrapping_add(worker))
    }

    /// Independent child stream; consumes one word of this stream.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n` (rejection sampling, no modulo bias).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() on an empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let phase = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(phase));
        r * libm::cos(phase)
    }

    pub fn normal_vec(&mut self, n: usize, mean: f64, std: f64) -> Vec<f64> {
        (0..n).map(|_| mean + std * self.normal()).collect()
    }

    /// Matrix with i.i.d. `N(mean, std²)` entries filled in column-major order.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize, mean: f64, std: f64) -> DenseMatrix {
        DenseMatrix::from_raw(rows, cols, self.normal_vec(rows * cols, mean, std))
    }
}

/// `n` i.i.d. draws from `N(mean, var)`.
pub fn sample_gaussian(rng: &mut RngStream, n: usize, mean: f64, var: f64) -> Result<DenseVector> {
    if !(var >= 0.0) {
        return Err(Error::contract(format!("variance must be non-negative, got {var}")));
    }
    let std = var.sqrt();
    Ok(DenseVector::from(rng.normal_vec(n, mean, std)))
}
