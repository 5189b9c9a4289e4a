//! Finite-size decoy-state bounds.
//!
//! Observed per-intensity counts deviate from their photon-number-conditioned
//! expectations by at most a Hoeffding term `sqrt(total/2 * ln(1/eps))`. Each
//! count is rescaled by `e^k / p_k` and shifted by that term in whichever
//! direction keeps the final bound one-sided:
//!
//! ```text
//! n±_k = e^k / p_k * (n_k ± sqrt(n_total/2 * ln(21/eps_sec)))
//! ```
//!
//! The total failure budget `eps_sec` is shared by 21 terms of equal size,
//! so each Hoeffding term runs at `eps_sec / 21`.

use crate::counts::{Basis, ObservedCounts};
use crate::intensity::IntensitySettings;
use crate::{math, Error, Result};

/// Number of equal shares the secrecy budget is split into.
pub const EPS_SHARES: f64 = 21.0;

/// Statistical regime used when turning counts into bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Confidence {
    /// Finite sample with total secrecy budget `eps_sec` (in `(0, 21]`).
    Finite { eps_sec: f64 },
    /// Infinitely long keys: no deviation terms, no sampling correction and
    /// no additive penalties.
    Asymptotic,
}

impl Confidence {
    pub fn finite(eps_sec: f64) -> Result<Self> {
        if !(eps_sec > 0.0 && eps_sec <= EPS_SHARES) {
            return Err(Error::InvalidArgument {
                name: "eps_sec",
                reason: "must lie in (0, 21]",
            });
        }
        Ok(Self::Finite { eps_sec })
    }

    /// Failure probability of a single Hoeffding term; 1 (zero deviation)
    /// in the asymptotic regime.
    pub fn per_term_eps(&self) -> f64 {
        match *self {
            Self::Finite { eps_sec } => eps_sec / EPS_SHARES,
            Self::Asymptotic => 1.0,
        }
    }

    pub fn eps_sec(&self) -> Option<f64> {
        match *self {
            Self::Finite { eps_sec } => Some(eps_sec),
            Self::Asymptotic => None,
        }
    }

    pub fn is_asymptotic(&self) -> bool {
        matches!(self, Self::Asymptotic)
    }
}

/// Status of the phase-error estimate carried in [`BoundEstimates`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PhaseStatus {
    Estimated,
    /// The observed single-photon error ratio was below half a count and was
    /// raised to `1/(2 s_Z1)` before evaluating the sampling correction.
    Regularized,
    /// `s_Z1` or `s_X1` is zero; `phi_x` is pinned at 1/2.
    Impossible,
}

/// Everything the key-length formula needs, kept for audit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundEstimates {
    pub s_x0: f64,
    pub s_x1: f64,
    pub s_z0: f64,
    pub s_z1: f64,
    pub v_z1: f64,
    pub phi_x: f64,
    pub phase_status: PhaseStatus,
    /// `None` in the asymptotic regime.
    pub eps_sec: Option<f64>,
}

/// Hoeffding deviation `sqrt(total/2 * ln(1/eps))` (natural log).
pub fn hoeffding_delta(total: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument {
            name: "eps",
            reason: "must lie in (0, 1]",
        });
    }
    if !(total >= 0.0) {
        return Err(Error::InvalidArgument {
            name: "total",
            reason: "must be non-negative",
        });
    }
    Ok(delta(total, eps))
}

#[inline]
fn delta(total: f64, eps: f64) -> f64 {
    math::sqrt(total / 2.0 * math::ln(1.0 / eps))
}

/// `(e^k/p_k)(count_k ∓ delta(total, eps))`, lower end clamped at 0.
pub fn scaled_count_bounds(count_k: f64, total: f64, k: f64, p_k: f64, eps: f64) -> Result<(f64, f64)> {
    if !(p_k > 0.0) {
        return Err(Error::InvalidArgument {
            name: "p_k",
            reason: "selection probability must be positive",
        });
    }
    if !(count_k >= 0.0 && count_k <= total) {
        return Err(Error::InvalidArgument {
            name: "count_k",
            reason: "must lie in [0, total]",
        });
    }
    let d = hoeffding_delta(total, eps)?;
    Ok(scaled(count_k, d, k, p_k))
}

#[inline]
fn scaled(count_k: f64, d: f64, k: f64, p_k: f64) -> (f64, f64) {
    let f = math::exp(k) / p_k;
    ((f * (count_k - d)).max(0.0), f * (count_k + d))
}

/// Lower and upper scaled counts for all three intensities.
fn scaled_all(counts: &[f64; 3], s: &IntensitySettings, eps: f64) -> ([f64; 3], [f64; 3]) {
    let total: f64 = counts.iter().sum();
    let d = delta(total, eps);
    let mu = s.mu();
    let p = s.probabilities();
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for i in 0..3 {
        (lo[i], hi[i]) = scaled(counts[i], d, mu[i], p[i]);
    }
    (lo, hi)
}

/// Lower bound on vacuum events among the detections of `basis`, clamped to
/// `[0, n_basis]`.
pub fn vacuum_events_lower(counts: &ObservedCounts, s: &IntensitySettings, conf: Confidence, basis: Basis) -> f64 {
    let n = counts.detections(basis);
    let (lo, hi) = scaled_all(n, s, conf.per_term_eps());
    vacuum_from_scaled(&lo, &hi, s, counts.detections_total(basis))
}

fn vacuum_from_scaled(lo: &[f64; 3], hi: &[f64; 3], s: &IntensitySettings, total: f64) -> f64 {
    let [_, mu2, mu3] = s.mu();
    let raw = s.tau(0) * (mu2 * lo[2] - mu3 * hi[1]) / (mu2 - mu3);
    math::clamp(raw, 0.0, total)
}

/// Lower bound on single-photon events among the detections of `basis`,
/// clamped to `[0, n_basis - s0_lower]`.
///
/// `s0_lower` stands in for the vacuum count; its coefficient is positive,
/// so a lower bound keeps the result a lower bound. The upper clamp keeps
/// `s0 + s1 <= n_basis` and only lowers the bound.
pub fn single_photon_events_lower(
    counts: &ObservedCounts,
    s: &IntensitySettings,
    conf: Confidence,
    s0_lower: f64,
    basis: Basis,
) -> f64 {
    let n = counts.detections(basis);
    let (lo, hi) = scaled_all(n, s, conf.per_term_eps());
    single_from_scaled(&lo, &hi, s, s0_lower, counts.detections_total(basis))
}

fn single_from_scaled(lo: &[f64; 3], hi: &[f64; 3], s: &IntensitySettings, s0_lower: f64, total: f64) -> f64 {
    let [mu1, mu2, mu3] = s.mu();
    let multi = (mu2 * mu2 - mu3 * mu3) / (mu1 * mu1) * (hi[0] - s0_lower / s.tau(0));
    let raw = s.tau(1) * mu1 * (lo[1] - hi[2] - multi) / s.single_photon_denominator();
    math::clamp(raw, 0.0, (total - s0_lower).max(0.0))
}

/// Upper bound on bit errors among single-photon Z-basis detections, clamped
/// to `[0, m_Z]`.
pub fn single_photon_errors_upper(counts: &ObservedCounts, s: &IntensitySettings, conf: Confidence) -> f64 {
    let m = counts.errors(Basis::Z);
    let (lo, hi) = scaled_all(m, s, conf.per_term_eps());
    let [_, mu2, mu3] = s.mu();
    let raw = s.tau(1) * (hi[1] - lo[2]) / (mu2 - mu3);
    math::clamp(raw, 0.0, counts.errors_total(Basis::Z))
}

/// Vacuum and single-photon lower bounds for one basis.
pub fn event_bounds(counts: &ObservedCounts, s: &IntensitySettings, conf: Confidence, basis: Basis) -> (f64, f64) {
    let n = counts.detections(basis);
    let total = counts.detections_total(basis);
    let (lo, hi) = scaled_all(n, s, conf.per_term_eps());
    let s0 = vacuum_from_scaled(&lo, &hi, s, total);
    let s1 = single_from_scaled(&lo, &hi, s, s0, total);
    (s0, s1)
}
