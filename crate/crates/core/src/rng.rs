//! Seeded random streams shared by the generator, the splitter and the
//! parameter initializer.
//!
//! Every stream is a `ChaCha8Rng` seeded with `seed_from_u64(seed)` and then
//! moved to an explicit stream number, so independent consumers of one seed
//! never share draws. Gaussian variates come from the Box–Muller transform
//! over two uniforms in (0, 1]:
//!
//! ```text
//! r = sqrt(-2 ln u1),  z0 = r cos(2π u2),  z1 = r sin(2π u2)
//! ```
//!
//! Both outputs are used: `z0` first, then the cached `z1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream numbers used across the crate.
pub mod streams {
    pub const IMPACT_JITTER: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const DROPOUT: u64 = 6;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a base seed with a sub-index (splitmix64 finalizer).
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Box–Muller standard normal source.
#[derive(Debug, Clone)]
pub struct Gaussian {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng, spare: None }
    }

    /// Uniform in (0, 1].
    fn open_unit(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.open_unit();
        let u2 = self.open_unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn sample(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.next_standard()
    }

    /// Normal draw rejected and redrawn until it lies within `bound` standard
    /// deviations of the mean.
    pub fn truncated(&mut self, std: f64, bound: f64) -> f64 {
        loop {
            let z = self.next_standard();
            if z.abs() <= bound {
                return std * z;
            }
        }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, 1), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, 1), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, 2), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn box_muller_moments() {
        let mut g = Gaussian::new(stream(1, streams::NOISE));
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.next_standard()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn truncation_respects_bound() {
        let mut g = Gaussian::new(stream(3, streams::INIT));
        for _ in 0..10_000 {
            assert!(g.truncated(0.02, 3.0).abs() <= 0.06);
        }
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(0, 0), sub_seed(0, 1));
        assert_eq!(sub_seed(9, 4), sub_seed(9, 4));
    }
}
