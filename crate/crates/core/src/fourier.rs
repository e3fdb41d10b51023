//! Low-pass Fourier comparison of histograms.

use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, sin};

use crate::error::{Error, Result};
use crate::scene::TransientHistogram;

/// The `k` lowest-frequency DFT basis vectors (DC included) for length-`n`
/// signals, `F_m = sum_j x_j exp(-2 pi i m j / n)`.
#[derive(Debug, Clone)]
pub struct LowPassBasis {
    n: usize,
    k: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl LowPassBasis {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("empty signal"));
        }
        if k == 0 || k > n / 2 + 1 {
            return Err(Error::invalid(alloc::format!(
                "k must lie in 1..={} for {n} bins, got {k}",
                n / 2 + 1
            )));
        }
        let mut c = Vec::with_capacity(n * k);
        let mut s = Vec::with_capacity(n * k);
        for m in 0..k {
            for j in 0..n {
                // Reduce m * j first so large products keep full accuracy.
                let angle = 2.0 * PI * ((m * j) % n) as f64 / n as f64;
                c.push(cos(angle));
                s.push(sin(angle));
            }
        }
        Ok(Self { n, k, cos: c, sin: s })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_coeffs(&self) -> usize {
        self.k
    }

    /// `(re, im)` of the kept coefficients.
    pub fn transform(&self, x: &[f64]) -> Vec<(f64, f64)> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.k)
            .map(|m| {
                let row = m * self.n..(m + 1) * self.n;
                let re: f64 = self.cos[row.clone()].iter().zip(x).map(|(c, v)| c * v).sum();
                let im: f64 = self.sin[row].iter().zip(x).map(|(s, v)| -s * v).sum();
                (re, im)
            })
            .collect()
    }

    /// Squared distance between two coefficient sets.
    pub fn distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let (dr, di) = (x.0 - y.0, x.1 - y.1);
                dr * dr + di * di
            })
            .sum()
    }

    /// Gradient of `sum_m |F_m(x) - target_m|^2` with respect to `x`, given
    /// the coefficient residuals `F_m(x) - target_m`.
    pub fn residual_gradient(&self, residual: &[(f64, f64)]) -> Vec<f64> {
        let mut g = alloc::vec![0.0; self.n];
        for (m, &(dr, di)) in residual.iter().enumerate() {
            let row = m * self.n..(m + 1) * self.n;
            for ((gj, c), s) in g.iter_mut().zip(&self.cos[row.clone()]).zip(&self.sin[row]) {
                *gj += 2.0 * (dr * c - di * s);
            }
        }
        g
    }
}

/// Squared L2 distance between the `k` lowest-frequency DFT coefficients
/// of two histograms.
pub fn fourier_loss(a: &TransientHistogram, b: &TransientHistogram, k: usize) -> Result<f64> {
    if a.n_bins() != b.n_bins() {
        return Err(Error::LengthMismatch {
            expected: a.n_bins(),
            actual: b.n_bins(),
        });
    }
    let basis = LowPassBasis::new(a.n_bins(), k)?;
    Ok(LowPassBasis::distance(
        &basis.transform(&a.flux),
        &basis.transform(&b.flux),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(v: Vec<f64>) -> TransientHistogram {
        TransientHistogram::new(v, 1e-10).unwrap()
    }

    /// Textbook O(n^2) DFT with complex arithmetic spelled out.
    fn naive_dft(x: &[f64], m: usize) -> (f64, f64) {
        let n = x.len() as f64;
        x.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, v)| {
            let a = -2.0 * PI * m as f64 * j as f64 / n;
            (re + v * cos(a), im + v * sin(a))
        })
    }

    fn signal(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let x = signal(48, 3);
        let basis = LowPassBasis::new(48, 25).unwrap();
        for (m, c) in basis.transform(&x).iter().enumerate() {
            let (re, im) = naive_dft(&x, m);
            assert!((c.0 - re).abs() < 1e-10 && (c.1 - im).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_histograms_have_zero_loss_and_loss_is_symmetric() {
        let a = hist(signal(64, 1));
        let b = hist(signal(64, 2));
        assert_eq!(fourier_loss(&a, &a, 10).unwrap(), 0.0);
        assert_eq!(fourier_loss(&a, &b, 10).unwrap(), fourier_loss(&b, &a, 10).unwrap());
    }

    #[test]
    fn rejects_bad_arguments() {
        let a = hist(signal(16, 1));
        let b = hist(signal(17, 1));
        assert!(matches!(fourier_loss(&a, &b, 4), Err(Error::LengthMismatch { .. })));
        assert!(fourier_loss(&a, &a, 0).is_err());
        assert!(fourier_loss(&a, &a, 10).is_err());
        assert!(fourier_loss(&a, &a, 9).is_ok());
    }

    #[test]
    fn alternating_noise_barely_moves_low_frequencies() {
        let a = hist(
            (0..512)
                .map(|i| 0.1 + libm::exp(-((i as f64 - 200.0) / 10.0).powi(2)))
                .collect(),
        );
        let eps = 0.05;
        let noisy = hist(
            a.flux
                .iter()
                .enumerate()
                .map(|(i, v)| if i % 2 == 0 { v + eps } else { v - eps })
                .collect(),
        );
        let low = fourier_loss(&a, &noisy, 4).unwrap();
        let full = fourier_loss(&a, &noisy, 257).unwrap();
        assert!(low < full, "{low} vs {full}");
        assert!(low < 1e-3 * full);
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        let x = signal(32, 5);
        let t = signal(32, 6);
        let basis = LowPassBasis::new(32, 9).unwrap();
        let target = basis.transform(&t);
        let loss = |v: &[f64]| LowPassBasis::distance(&basis.transform(v), &target);
        let residual: Vec<_> = basis
            .transform(&x)
            .iter()
            .zip(&target)
            .map(|(a, b)| (a.0 - b.0, a.1 - b.1))
            .collect();
        let g = basis.residual_gradient(&residual);
        let h = 1e-6;
        for j in 0..32 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * g[j].abs().max(1.0));
        }
    }
}
