//! Wavefunctions sampled on a fixed grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples of ψ on a grid: one channel for a real wavefunction, two
/// (real, imaginary) for a complex one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWavefunction {
    pub channels: Vec<Vec<f64>>,
}

impl GridWavefunction {
    pub fn new(channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::usage("a wavefunction has one or two channels"));
        }
        let m = channels[0].len();
        if channels.iter().any(|c| c.len() != m) {
            return Err(Error::usage("wavefunction channels differ in length"));
        }
        Ok(GridWavefunction { channels })
    }

    pub fn real(samples: Vec<f64>) -> Self {
        GridWavefunction { channels: vec![samples] }
    }

    pub fn complex(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        Self::new(vec![re, im])
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn re(&self) -> &[f64] {
        &self.channels[0]
    }

    /// Imaginary part, if the wavefunction is complex.
    pub fn im(&self) -> Option<&[f64]> {
        self.channels.get(1).map(Vec::as_slice)
    }

    /// `|ψ(x_j)|²` at every grid point.
    pub fn density(&self) -> Vec<f64> {
        (0..self.len())
            .map(|j| self.channels.iter().map(|c| c[j] * c[j]).sum())
            .collect()
    }

    /// Unweighted discrete 2-norm.
    pub fn norm(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Copy scaled to unit discrete norm.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::usage("cannot normalize a zero or non-finite wavefunction"));
        }
        Ok(GridWavefunction {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v / n).collect())
                .collect(),
        })
    }

    /// Discrete complex inner product `Σ_j conj(self_j)·other_j` as
    /// `(re, im)`. A missing imaginary channel counts as zero.
    pub fn inner(&self, other: &Self) -> Result<(f64, f64)> {
        if self.len() != other.len() {
            return Err(Error::usage(format!(
                "grid mismatch: {} vs {} points",
                self.len(),
                other.len()
            )));
        }
        let zero = vec![0.0; self.len()];
        let (ar, ai) = (self.re(), self.im().unwrap_or(&zero));
        let (br, bi) = (other.re(), other.im().unwrap_or(&zero));
        let mut re = 0.0;
        let mut im = 0.0;
        for j in 0..self.len() {
            re += ar[j] * br[j] + ai[j] * bi[j];
            im += ar[j] * bi[j] - ai[j] * br[j];
        }
        Ok((re, im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_product_conjugates_left() {
        let a = GridWavefunction::complex(vec![0.0], vec![1.0]).unwrap(); // i
        let b = GridWavefunction::complex(vec![1.0], vec![0.0]).unwrap(); // 1
        assert_eq!(a.inner(&b).unwrap(), (0.0, -1.0));
        assert_eq!(b.inner(&a).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn normalization() {
        let psi = GridWavefunction::real(vec![3.0, 4.0]).normalized().unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-15);
        assert!(GridWavefunction::real(vec![0.0, 0.0]).normalized().is_err());
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = GridWavefunction::real(vec![1.0, 2.0]);
        let b = GridWavefunction::real(vec![1.0]);
        assert!(a.inner(&b).is_err());
        assert!(GridWavefunction::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
