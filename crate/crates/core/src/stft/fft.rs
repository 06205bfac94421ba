//! Iterative radix-2 decimation-in-time FFT.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::StftError;

/// Precomputed bit-reversal table and twiddles for one transform size.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    rev: Vec<usize>,
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self, StftError> {
        if n == 0 || !n.is_power_of_two() {
            return Err(StftError::NotPowerOfTwo(n));
        }
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        // twiddles computed directly rather than by recurrence
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(Self { n, rev, twiddles })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn process(&self, buf: &mut [Complex64]) -> Result<(), StftError> {
        if buf.len() != self.n {
            return Err(StftError::LengthMismatch {
                expected: self.n,
                got: buf.len(),
            });
        }
        for i in 0..self.n {
            let j = self.rev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let step = self.n / len;
            for start in (0..self.n).step_by(len) {
                for j in 0..half {
                    let w = self.twiddles[j * step];
                    let u = buf[start + j];
                    let v = buf[start + j + half] * w;
                    buf[start + j] = u + v;
                    buf[start + j + half] = u - v;
                }
            }
            len <<= 1;
        }
        Ok(())
    }
}

/// `X[k] = Σ_m x[m]·exp(−2πi·km/n)`.
pub fn fft(frame: &[Complex64], n: usize) -> Result<Vec<Complex64>, StftError> {
    let plan = FftPlan::new(n)?;
    let mut buf = frame.to_vec();
    plan.process(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(m, v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((k * m) % n) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    fn random(n: usize, seed: u64) -> Vec<Complex64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect()
    }

    fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zeros_to_zeros() {
        let x = vec![Complex64::default(); 16];
        assert!(fft(&x, 16).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn on_bin_cosine() {
        let x: Vec<Complex64> = (0..64)
            .map(|m| Complex64::new((2.0 * PI * 3.0 * m as f64 / 64.0).cos(), 0.0))
            .collect();
        let spec = fft(&x, 64).unwrap();
        for (k, v) in spec.iter().enumerate() {
            if k == 3 || k == 61 {
                assert!((v.norm() - 32.0).abs() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9, "bin {k}: {}", v.norm());
            }
        }
        assert!(max_abs_diff(&spec, &naive_dft(&x)) < 1e-9);
    }

    #[test]
    fn matches_naive_dft() {
        let x = random(128, 42);
        assert!(max_abs_diff(&fft(&x, 128).unwrap(), &naive_dft(&x)) < 1e-9);
    }

    #[test]
    fn all_sizes_and_linearity() {
        for p in 0..=8 {
            let n = 1usize << p;
            let x = random(n, p as u64);
            let y = random(n, 100 + p as u64);
            assert!(max_abs_diff(&fft(&x, n).unwrap(), &naive_dft(&x)) < 1e-9, "n={n}");
            let (a, b) = (Complex64::new(0.7, -0.2), Complex64::new(-1.3, 0.4));
            let combo: Vec<_> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let lhs = fft(&combo, n).unwrap();
            let rhs: Vec<_> = fft(&x, n)
                .unwrap()
                .iter()
                .zip(fft(&y, n).unwrap())
                .map(|(u, v)| a * u + b * v)
                .collect();
            assert!(max_abs_diff(&lhs, &rhs) < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(fft(&[Complex64::default(); 6], 6), Err(StftError::NotPowerOfTwo(6))));
        assert!(matches!(fft(&[Complex64::default(); 0], 0), Err(StftError::NotPowerOfTwo(0))));
        assert!(matches!(
            fft(&[Complex64::default(); 4], 8),
            Err(StftError::LengthMismatch { .. })
        ));
    }
}
