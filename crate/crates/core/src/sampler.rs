//! Collocation points.
//!
//! A batch is a uniform mesh over the domain where every node is replaced
//! by a draw from a normal distribution centred on it. Draws that leave the
//! domain are reflected back in, so each batch still spans the whole
//! interval while no two batches coincide.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSampler {
    pub domain: (f64, f64),
    pub n: usize,
    /// Jitter standard deviation, in units of length.
    pub sigma: f64,
    pub seed: u64,
}

impl MeshSampler {
    /// Sampler with the default jitter of half a mesh spacing.
    pub fn new(domain: (f64, f64), n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::config("sampler.batch_size", "must be at least 2"));
        }
        let sigma = 0.5 * (domain.1 - domain.0) / (n - 1) as f64;
        Self::with_sigma(domain, n, sigma, seed)
    }

    pub fn with_sigma(domain: (f64, f64), n: usize, sigma: f64, seed: u64) -> Result<Self> {
        let s = MeshSampler { domain, n, sigma, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("sampler.batch_size", "must be at least 2"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sampler.sigma", "must be positive"));
        }
        if !(self.domain.0 < self.domain.1) {
            return Err(Error::config("sampler.domain", "empty interval"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.domain.1 - self.domain.0) / (self.n - 1) as f64
    }

    /// Batch for training step `step`, sorted ascending. Depends only on
    /// `(seed, step)`.
    pub fn sample_batch(&self, step: u64) -> Vec<f64> {
        let (a, b) = self.domain;
        let width = b - a;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        let normal = Normal::new(0.0, self.sigma).expect("sigma validated positive");
        let mut pts: Vec<f64> = eval_grid(self.domain, self.n)
            .into_iter()
            .map(|c| reflect(c + normal.sample(&mut rng), a, width))
            .collect();
        pts.sort_by(f64::total_cmp);
        pts
    }
}

/// Fold `x` into `[a, a + width]` by mirror reflection at both ends.
fn reflect(x: f64, a: f64, width: f64) -> f64 {
    let period = 2.0 * width;
    let mut u = (x - a).rem_euclid(period);
    if u > width {
        u = period - u;
    }
    (a + u).clamp(a, a + width)
}

/// `m` uniform points including both endpoints.
pub fn eval_grid(domain: (f64, f64), m: usize) -> Vec<f64> {
    assert!(m >= 2, "evaluation grid needs at least 2 points");
    let (a, b) = domain;
    let h = (b - a) / (m - 1) as f64;
    (0..m)
        .map(|i| if i == m - 1 { b } else { a + h * i as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_examples() {
        assert_eq!(eval_grid((-1.5, 1.5), 2), vec![-1.5, 1.5]);
        assert_eq!(eval_grid((0.0, 2.0), 3), vec![0.0, 1.0, 2.0]);
        let g = eval_grid((0.0, 2.0 * PI), 1024);
        assert!((g[1] - g[0] - 2.0 * PI / 1023.0).abs() < 1e-15);
        assert_eq!(*g.last().unwrap(), 2.0 * PI);
    }

    #[test]
    fn tiny_jitter_recovers_the_grid() {
        let s = MeshSampler::with_sigma((-1.5, 1.5), 33, 1e-300, 4).unwrap();
        let grid = eval_grid((-1.5, 1.5), 33);
        let batch = s.sample_batch(0);
        for (p, g) in batch.iter().zip(&grid) {
            assert!((p - g).abs() < 1e-15);
        }
    }

    #[test]
    fn reproducible_and_step_dependent() {
        let s = MeshSampler::new((0.0, 2.0 * PI), 128, 9).unwrap();
        assert_eq!(s.sample_batch(5), s.sample_batch(5));
        assert_ne!(s.sample_batch(5), s.sample_batch(6));
    }

    #[test]
    fn reflection_stays_inside() {
        for x in [-7.3, -1.0, 0.0, 0.5, 1.0, 2.2, 9.9] {
            let r = reflect(x, 0.0, 1.0);
            assert!((0.0..=1.0).contains(&r), "{x} -> {r}");
        }
        assert!((reflect(-0.25, 0.0, 1.0) - 0.25).abs() < 1e-15);
        assert!((reflect(1.25, 0.0, 1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(MeshSampler::new((0.0, 1.0), 1, 0).is_err());
        assert!(MeshSampler::with_sigma((0.0, 1.0), 8, 0.0, 0).is_err());
    }
}
