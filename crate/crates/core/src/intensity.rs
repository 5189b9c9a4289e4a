//! Laser intensity levels and the photon-number distribution they induce.

use crate::{math, Error, Result};

/// Tolerance on `p_mu1 + p_mu2 + p_mu3 = 1`.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

/// The three mean photon numbers `mu1 > mu2 + mu3`, `mu2 > mu3 >= 0` and the
/// probabilities with which each is selected.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntensitySettings {
    mu: [f64; 3],
    p: [f64; 3],
}

impl IntensitySettings {
    pub fn new(mu: [f64; 3], p: [f64; 3]) -> Result<Self> {
        let [mu1, mu2, mu3] = mu;
        if mu.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidIntensities("non-finite value"));
        }
        if mu3 < 0.0 {
            return Err(Error::InvalidIntensities("mu3 must be >= 0"));
        }
        if mu2 <= mu3 {
            return Err(Error::InvalidIntensities("mu2 must exceed mu3"));
        }
        if mu1 <= mu2 + mu3 {
            return Err(Error::InvalidIntensities("mu1 must exceed mu2 + mu3"));
        }
        if p.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidIntensities("selection probabilities must be positive"));
        }
        if (p[0] + p[1] + p[2] - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(Error::InvalidIntensities("selection probabilities must sum to 1"));
        }
        Ok(Self { mu, p })
    }

    /// Builds the settings from the two free probabilities; `p_mu3` is the
    /// remainder.
    pub fn from_free(mu1: f64, mu2: f64, mu3: f64, p_mu1: f64, p_mu2: f64) -> Result<Self> {
        Self::new([mu1, mu2, mu3], [p_mu1, p_mu2, 1.0 - p_mu1 - p_mu2])
    }

    pub fn mu(&self) -> [f64; 3] {
        self.mu
    }

    pub fn probabilities(&self) -> [f64; 3] {
        self.p
    }

    pub fn mu1(&self) -> f64 {
        self.mu[0]
    }

    pub fn mu2(&self) -> f64 {
        self.mu[1]
    }

    pub fn mu3(&self) -> f64 {
        self.mu[2]
    }

    /// Probability that a pulse carries `n` photons, averaged over the
    /// intensity choice.
    pub fn tau(&self, n: u32) -> f64 {
        tau(n, &self.mu, &self.p)
    }

    /// `mu1 (mu2 - mu3) - (mu2^2 - mu3^2)`; positive for every accepted
    /// setting.
    pub fn single_photon_denominator(&self) -> f64 {
        let [mu1, mu2, mu3] = self.mu;
        mu1 * (mu2 - mu3) - (mu2 * mu2 - mu3 * mu3)
    }
}

/// `sum_k p_k e^{-k} k^n / n!` over arbitrary weights, computed in log space
/// so `n` up to 170 does not overflow.
pub(crate) fn tau(n: u32, mu: &[f64], p: &[f64]) -> f64 {
    let ln_fact = math::ln_factorial(n);
    mu.iter()
        .zip(p)
        .filter(|(_, &pk)| pk > 0.0)
        .map(|(&k, &pk)| {
            if k == 0.0 {
                if n == 0 {
                    pk
                } else {
                    0.0
                }
            } else {
                pk * math::exp(-k + f64::from(n) * math::ln(k) - ln_fact)
            }
        })
        .sum()
}
