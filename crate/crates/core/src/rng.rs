//! Seeded random source shared by initialization, generators and certification.
//!
//! The stream is xoshiro256++ seeded through SplitMix64 (`seed_from_u64`).
//! Uniforms take the top 53 bits of each draw; standard normals come from
//! Box–Muller on consecutive uniform pairs, using both outputs of each pair.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::symmat::SymMatrix;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Seed for the `index`-th independent stream derived from `seed`.
    pub fn stream_seed(seed: u64, index: u64) -> u64 {
        seed ^ index.wrapping_mul(GOLDEN_GAMMA)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as f64;
        lo + ((self.uniform() * span) as usize).min(hi - lo)
    }

    /// `G Gᵀ + shift·I` with `G` an r×r standard-normal matrix drawn row-major.
    pub fn random_pd(&mut self, r: usize, shift: f64) -> SymMatrix {
        let g: Vec<f64> = (0..r * r).map(|_| self.normal()).collect();
        SymMatrix::from_fn(r, |i, j| {
            let dot: f64 = (0..r).map(|k| g[i * r + k] * g[j * r + k]).sum();
            if i == j {
                dot + shift
            } else {
                dot
            }
        })
    }

    /// Symmetric matrix with standard-normal upper triangle.
    pub fn random_sym(&mut self, r: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(r);
        for i in 0..r {
            for j in i..r {
                m.set(i, j, self.normal());
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = Rng::new(7);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn range_stays_in_bounds() {
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            let k = rng.range_inclusive(4, 10);
            assert!((4..=10).contains(&k));
        }
    }
}
