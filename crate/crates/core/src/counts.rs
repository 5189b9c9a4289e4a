//! Per-intensity sifted detection and error counts.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Basis {
    X,
    Z,
}

/// Observable statistics of one protocol run, indexed by intensity
/// (`[mu1, mu2, mu3]`).
///
/// Counts are stored as `f64` so the same type carries real-valued
/// expectations from the channel model and integer tallies from the
/// simulator. Totals are always derived from the per-intensity parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObservedCounts {
    pub n_x: [f64; 3],
    pub n_z: [f64; 3],
    pub m_x: [f64; 3],
    pub m_z: [f64; 3],
}

impl ObservedCounts {
    pub fn new(n_x: [f64; 3], n_z: [f64; 3], m_x: [f64; 3], m_z: [f64; 3]) -> Result<Self> {
        let c = Self { n_x, n_z, m_x, m_z };
        c.validate()?;
        Ok(c)
    }

    pub fn from_integers(n_x: [u64; 3], n_z: [u64; 3], m_x: [u64; 3], m_z: [u64; 3]) -> Result<Self> {
        let f = |a: [u64; 3]| a.map(|v| v as f64);
        Self::new(f(n_x), f(n_z), f(m_x), f(m_z))
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.n_x.iter().chain(&self.n_z).chain(&self.m_x).chain(&self.m_z);
        for &v in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidCounts("counts must be finite and non-negative"));
            }
        }
        for k in 0..3 {
            if self.m_x[k] > self.n_x[k] || self.m_z[k] > self.n_z[k] {
                return Err(Error::InvalidCounts("error count exceeds detection count"));
            }
        }
        Ok(())
    }

    pub fn detections(&self, basis: Basis) -> &[f64; 3] {
        match basis {
            Basis::X => &self.n_x,
            Basis::Z => &self.n_z,
        }
    }

    pub fn errors(&self, basis: Basis) -> &[f64; 3] {
        match basis {
            Basis::X => &self.m_x,
            Basis::Z => &self.m_z,
        }
    }

    pub fn n_x_total(&self) -> f64 {
        self.n_x.iter().sum()
    }

    pub fn n_z_total(&self) -> f64 {
        self.n_z.iter().sum()
    }

    pub fn m_x_total(&self) -> f64 {
        self.m_x.iter().sum()
    }

    pub fn m_z_total(&self) -> f64 {
        self.m_z.iter().sum()
    }

    pub fn detections_total(&self, basis: Basis) -> f64 {
        self.detections(basis).iter().sum()
    }

    pub fn errors_total(&self, basis: Basis) -> f64 {
        self.errors(basis).iter().sum()
    }

    /// Pooled X-basis error rate `m_X / n_X`, 0 when nothing was detected.
    pub fn observed_error_rate_x(&self) -> f64 {
        let n = self.n_x_total();
        if n > 0.0 {
            self.m_x_total() / n
        } else {
            0.0
        }
    }

    /// Every field multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |a: [f64; 3]| a.map(|v| v * factor);
        Self {
            n_x: s(self.n_x),
            n_z: s(self.n_z),
            m_x: s(self.m_x),
            m_z: s(self.m_z),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_follow_parts() {
        let c = ObservedCounts::from_integers([3, 4, 5], [1, 1, 1], [0, 1, 2], [1, 0, 1]).unwrap();
        assert_eq!(c.n_x_total(), 12.0);
        assert_eq!(c.n_z_total(), 3.0);
        assert_eq!(c.m_x_total(), 3.0);
        assert_eq!(c.m_z_total(), 2.0);
        assert_eq!(c.observed_error_rate_x(), 0.25);
    }

    #[test]
    fn rejects_more_errors_than_detections() {
        assert!(ObservedCounts::from_integers([1, 0, 0], [0; 3], [2, 0, 0], [0; 3]).is_err());
        assert!(ObservedCounts::new([-1.0, 0.0, 0.0], [0.0; 3], [0.0; 3], [0.0; 3]).is_err());
    }

    #[test]
    fn empty_error_rate_is_zero() {
        assert_eq!(ObservedCounts::default().observed_error_rate_x(), 0.0);
    }
}
