use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::Matrix;
use crate::error::{Error, Result};

/// Distributions supported by [`RngStream::draw`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Uniform on `[0, 1)`.
    Uniform,
    /// Standard normal, mean 0 and standard deviation 1.
    Gaussian,
    /// 1 with probability `p`, else 0.
    Bernoulli(f64),
}

/// Seeded random stream.
///
/// The generator is xoshiro256++ whose 256-bit state is expanded from the
/// 64-bit seed with splitmix64. Uniform doubles take the top 53 bits of a
/// 64-bit output; Gaussians use the Box-Muller transform and hand out both
/// values of each pair. The sequence for a given seed is identical on every
/// platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare_gaussian: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, inner: Xoshiro256PlusPlus::seed_from_u64(seed), spare_gaussian: None }
    }

    /// Independent stream for a named purpose (init, shuffling, dropout…),
    /// derived from `seed` alone so it does not depend on how many values
    /// other streams have drawn.
    pub fn derived(seed: u64, tag: u64) -> Self {
        RngStream::new(seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn seed(&self) -> u64 {
        self.seed
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

    pub fn gaussian(&mut self) -> f64 {
        if let Some(v) = self.spare_gaussian.take() {
            return v;
        }
        // 1 - U lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn draw(&mut self, rows: usize, cols: usize, dist: Distribution) -> Result<Matrix> {
        if let Distribution::Bernoulli(p) = dist {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("bernoulli probability {p} outside [0, 1]")));
            }
        }
        let n = rows * cols;
        let data: Vec<f64> = match dist {
            Distribution::Uniform => (0..n).map(|_| self.uniform()).collect(),
            Distribution::Gaussian => (0..n).map(|_| self.gaussian()).collect(),
            Distribution::Bernoulli(p) => (0..n).map(|_| if self.uniform() < p { 1.0 } else { 0.0 }).collect(),
        };
        Ok(Matrix::from_vec_unchecked(rows, cols, data))
    }
}
