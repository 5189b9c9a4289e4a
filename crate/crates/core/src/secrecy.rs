//! Phase-error estimation, key length and the secrecy budget.

use crate::counts::{Basis, ObservedCounts};
use crate::decoy::{self, BoundEstimates, Confidence, PhaseStatus, EPS_SHARES};
use crate::intensity::IntensitySettings;
use crate::{math, Error, Result};

/// Maximum number of `ell -> eps_sec = kappa*ell -> ell` iterations.
pub const BUDGET_ITERATION_CAP: usize = 100;

/// How the secrecy parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SecrecyBudget {
    /// `eps_sec = kappa * ell`, solved as a fixed point.
    PerBit { kappa: f64 },
    /// A fixed `eps_sec`.
    Fixed { eps_sec: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SecurityParams {
    pub eps_cor: f64,
    pub budget: SecrecyBudget,
    pub phi_tol: f64,
    pub f_ec: f64,
}

impl SecurityParams {
    pub fn new(eps_cor: f64, budget: SecrecyBudget, phi_tol: f64, f_ec: f64) -> Result<Self> {
        let sp = Self {
            eps_cor,
            budget,
            phi_tol,
            f_ec,
        };
        sp.validate()?;
        Ok(sp)
    }

    /// kappa = 1e-15, eps_cor = 1e-15, f_EC = 1.16, phi_tol = 0.25.
    pub fn reference() -> Self {
        Self {
            eps_cor: 1e-15,
            budget: SecrecyBudget::PerBit { kappa: 1e-15 },
            phi_tol: 0.25,
            f_ec: 1.16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.eps_cor) {
            return Err(Error::InvalidSecurity("eps_cor must lie in (0, 1)"));
        }
        match self.budget {
            SecrecyBudget::PerBit { kappa } if !in_unit(kappa) => {
                return Err(Error::InvalidSecurity("kappa must lie in (0, 1)"))
            }
            SecrecyBudget::Fixed { eps_sec } if !in_unit(eps_sec) => {
                return Err(Error::InvalidSecurity("eps_sec must lie in (0, 1)"))
            }
            _ => {}
        }
        if !(self.phi_tol > 0.0 && self.phi_tol < 0.5) {
            return Err(Error::InvalidSecurity("phi_tol must lie in (0, 0.5)"));
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(Error::InvalidSecurity("f_EC must be >= 1"));
        }
        Ok(())
    }
}

/// Finite-key or asymptotic evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Regime {
    #[default]
    Finite,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KeyRateResult {
    /// Secret key length in bits.
    pub ell: u64,
    /// `ell / pulses`, 0 when aborted.
    pub rate: f64,
    /// Laser pulses sent.
    pub pulses: f64,
    pub leak_ec: f64,
    pub e_obs: f64,
    pub bounds: BoundEstimates,
    /// Secrecy parameter the key length was computed at; `None` when no key
    /// exists or in the asymptotic regime.
    pub eps_sec: Option<f64>,
    pub aborted: bool,
    /// The key-length expression before flooring and clamping. Negative
    /// values say how far a point is from producing a key.
    pub margin_bits: f64,
    pub budget_iterations: usize,
}

/// Binary entropy in bits, `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument {
            name: "x",
            reason: "must lie in [0, 1]",
        });
    }
    Ok(h(x))
}

pub(crate) fn h(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * math::log2(x) - (1.0 - x) * math::log2(1.0 - x)
}

/// Random-sampling correction to the phase error rate,
///
/// ```text
/// gamma(a,b,c,d) = sqrt( (c+d)(1-b)b / (c d ln 2) * log2( (c+d)/(c d (1-b) b) * 21^2/a^2 ) )
/// ```
///
/// Returns 0 where the logarithm is not positive.
pub fn gamma_correction(a: f64, b: f64, c: f64, d: f64) -> Result<f64> {
    if !(a > 0.0 && a <= EPS_SHARES) {
        return Err(Error::InvalidArgument {
            name: "a",
            reason: "must lie in (0, 21]",
        });
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::InvalidArgument {
            name: "b",
            reason: "must lie in (0, 1); regularize first",
        });
    }
    if !(c > 0.0 && d > 0.0) {
        return Err(Error::InvalidArgument {
            name: "c, d",
            reason: "must be positive",
        });
    }
    Ok(gamma(a, b, c, d))
}

fn gamma(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let spread = (c + d) / (c * d);
    let var = (1.0 - b) * b;
    let l = math::log2(spread / var * (EPS_SHARES * EPS_SHARES) / (a * a));
    if !(l > 0.0) {
        return 0.0;
    }
    math::sqrt(spread * var / core::f64::consts::LN_2 * l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate {
    pub phi: f64,
    pub regularized: bool,
}

/// Upper bound on the single-photon phase error rate of the key basis,
/// `min(1/2, v/s_Z1 + gamma(eps_sec, v/s_Z1, s_Z1, s_X1))`.
///
/// When `v/s_Z1` is below half a count (`1/(2 s_Z1)`), the ratio fed into
/// `gamma` is raised to that value and the estimate is flagged.
pub fn phase_error_rate_upper(v_z1: f64, s_z1: f64, s_x1: f64, conf: Confidence) -> Result<PhaseEstimate> {
    if !(s_z1 > 0.0 && s_x1 > 0.0) {
        return Err(Error::EstimationImpossible);
    }
    if !(v_z1 >= 0.0) {
        return Err(Error::InvalidArgument {
            name: "v_z1",
            reason: "must be non-negative",
        });
    }
    let b = v_z1 / s_z1;
    if b >= 0.5 {
        return Ok(PhaseEstimate {
            phi: 0.5,
            regularized: false,
        });
    }
    let eps_sec = match conf {
        Confidence::Asymptotic => {
            return Ok(PhaseEstimate {
                phi: b,
                regularized: false,
            })
        }
        Confidence::Finite { eps_sec } => eps_sec,
    };
    let floor_b = 1.0 / (2.0 * s_z1);
    let (b_eff, regularized) = if b < floor_b { (floor_b, true) } else { (b, false) };
    let g = if b_eff < 1.0 {
        gamma(eps_sec, b_eff, s_z1, s_x1)
    } else {
        0.5
    };
    Ok(PhaseEstimate {
        phi: (b + g).min(0.5),
        regularized,
    })
}

/// All decoy bounds plus the phase error rate for one set of counts.
pub fn estimate_bounds(counts: &ObservedCounts, s: &IntensitySettings, conf: Confidence) -> BoundEstimates {
    let (s_x0, s_x1) = decoy::event_bounds(counts, s, conf, Basis::X);
    let (s_z0, s_z1) = decoy::event_bounds(counts, s, conf, Basis::Z);
    let v_z1 = decoy::single_photon_errors_upper(counts, s, conf);
    let (phi_x, phase_status) = match phase_error_rate_upper(v_z1, s_z1, s_x1, conf) {
        Ok(PhaseEstimate { phi, regularized }) => (
            phi,
            if regularized {
                PhaseStatus::Regularized
            } else {
                PhaseStatus::Estimated
            },
        ),
        Err(_) => (0.5, PhaseStatus::Impossible),
    };
    BoundEstimates {
        s_x0,
        s_x1,
        s_z0,
        s_z1,
        v_z1,
        phi_x,
        phase_status,
        eps_sec: conf.eps_sec(),
    }
}

/// Bits consumed by the secrecy and correctness budgets:
/// `6 log2(21/eps_sec) + log2(2/eps_cor)`; zero asymptotically.
pub fn finite_size_penalty(conf: Confidence, eps_cor: f64) -> f64 {
    match conf {
        Confidence::Finite { eps_sec } => 6.0 * math::log2(EPS_SHARES / eps_sec) + math::log2(2.0 / eps_cor),
        Confidence::Asymptotic => 0.0,
    }
}

/// The key-length expression before flooring.
pub fn key_length_margin(bounds: &BoundEstimates, leak_ec: f64, eps_cor: f64) -> f64 {
    let conf = match bounds.eps_sec {
        Some(eps_sec) => Confidence::Finite { eps_sec },
        None => Confidence::Asymptotic,
    };
    bounds.s_x0 + bounds.s_x1 - bounds.s_x1 * h(bounds.phi_x) - leak_ec - finite_size_penalty(conf, eps_cor)
}

/// `floor(s_X0 + s_X1 (1 - h(phi_X)) - leak_EC - 6 log2(21/eps_sec) - log2(2/eps_cor))`,
/// 0 when negative.
pub fn key_length(bounds: &BoundEstimates, leak_ec: f64, eps_cor: f64) -> u64 {
    floor_bits(key_length_margin(bounds, leak_ec, eps_cor))
}

fn floor_bits(margin: f64) -> u64 {
    if margin.is_finite() && margin >= 1.0 {
        math::floor(margin) as u64
    } else {
        0
    }
}

/// Error-correction leakage `n_X * f_EC * h(e_obs)` in bits. Error rates
/// above 1/2 are charged as 1/2.
pub fn leak_ec(n_x: f64, f_ec: f64, e_obs: f64) -> Result<f64> {
    let e = binary_entropy(e_obs)?;
    Ok(if e_obs > 0.5 { n_x * f_ec } else { n_x * f_ec * e })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetSolution {
    /// `kappa * ell`; `None` when no positive key exists.
    pub eps_sec: Option<f64>,
    pub ell: u64,
    pub iterations: usize,
}

/// Solves `ell = key_length(eps_sec = kappa * ell)` by iterating downward
/// from `start`.
///
/// `key_length_at` must be non-decreasing in `eps_sec`. Iterates are capped
/// so that `kappa * ell < 1`; the result is the largest fixed point below
/// the cap.
pub fn solve_security_budget<F>(start: u64, kappa: f64, mut key_length_at: F) -> Result<BudgetSolution>
where
    F: FnMut(f64) -> u64,
{
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidArgument {
            name: "kappa",
            reason: "must lie in (0, 1]",
        });
    }
    let cap = max_ell_for(kappa);
    let mut ell = start.min(cap);
    for it in 1..=BUDGET_ITERATION_CAP {
        if ell == 0 {
            return Ok(BudgetSolution {
                eps_sec: None,
                ell: 0,
                iterations: it - 1,
            });
        }
        let next = key_length_at(kappa * ell as f64).min(cap);
        if next == ell {
            return Ok(BudgetSolution {
                eps_sec: Some(kappa * ell as f64),
                ell,
                iterations: it,
            });
        }
        ell = next;
    }
    Err(Error::NoConvergence(BUDGET_ITERATION_CAP))
}

/// Largest `ell` with `kappa * ell < 1`.
fn max_ell_for(kappa: f64) -> u64 {
    let bound = 1.0 / kappa;
    if bound > 9.0e15 {
        return u64::MAX;
    }
    let mut ell = math::floor(bound) as u64;
    while ell > 0 && kappa * ell as f64 >= 1.0 {
        ell -= 1;
    }
    ell
}

/// Full key-rate evaluation from per-intensity counts.
///
/// With `enforce_phi_tol` the protocol also aborts when `phi_X >= phi_tol`;
/// expectation-model evaluations leave it off.
pub fn key_rate(
    counts: &ObservedCounts,
    s: &IntensitySettings,
    sp: &SecurityParams,
    regime: Regime,
    pulses: f64,
    enforce_phi_tol: bool,
) -> Result<KeyRateResult> {
    let n_x = counts.n_x_total();
    let e_obs = counts.observed_error_rate_x();
    let leak = leak_ec(n_x, sp.f_ec, e_obs.min(1.0))?;

    let (bounds, ell, margin, iterations) = match (regime, sp.budget) {
        (Regime::Asymptotic, _) => {
            let b = estimate_bounds(counts, s, Confidence::Asymptotic);
            let m = key_length_margin(&b, leak, sp.eps_cor);
            (b, floor_bits(m), m, 0)
        }
        (Regime::Finite, SecrecyBudget::Fixed { eps_sec }) => {
            let b = estimate_bounds(counts, s, Confidence::finite(eps_sec)?);
            let m = key_length_margin(&b, leak, sp.eps_cor);
            (b, floor_bits(m), m, 0)
        }
        (Regime::Finite, SecrecyBudget::PerBit { kappa }) => {
            let at = |eps_sec: f64| estimate_bounds(counts, s, Confidence::Finite { eps_sec });
            let start = if n_x.is_finite() && n_x > 0.0 { n_x as u64 } else { 0 };
            let sol = solve_security_budget(start, kappa, |eps| key_length(&at(eps), leak, sp.eps_cor));
            match sol {
                Ok(BudgetSolution {
                    eps_sec: Some(eps_sec),
                    ell,
                    iterations,
                }) => {
                    let b = at(eps_sec);
                    (b, ell, key_length_margin(&b, leak, sp.eps_cor), iterations)
                }
                // No key: report the bounds at the smallest budget a
                // one-bit key would carry.
                Ok(BudgetSolution { iterations, .. }) => {
                    let b = at(kappa);
                    (b, 0, key_length_margin(&b, leak, sp.eps_cor).min(0.0), iterations)
                }
                Err(Error::NoConvergence(n)) => {
                    let b = at(kappa);
                    (b, 0, key_length_margin(&b, leak, sp.eps_cor).min(0.0), n)
                }
                Err(e) => return Err(e),
            }
        }
    };

    let phase_abort = enforce_phi_tol && bounds.phi_x >= sp.phi_tol;
    let aborted = ell == 0 || phase_abort;
    let ell = if aborted { 0 } else { ell };
    let rate = if aborted || !(pulses > 0.0) {
        0.0
    } else {
        ell as f64 / pulses
    };
    let eps_sec = match (regime, aborted) {
        (Regime::Finite, false) => bounds.eps_sec,
        _ => None,
    };
    Ok(KeyRateResult {
        ell,
        rate,
        pulses,
        leak_ec: leak,
        e_obs,
        bounds,
        eps_sec,
        aborted,
        margin_bits: margin,
        budget_iterations: iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bounds(s_x0: f64, s_x1: f64, phi_x: f64, eps_sec: Option<f64>) -> BoundEstimates {
        BoundEstimates {
            s_x0,
            s_x1,
            s_z0: 0.0,
            s_z1: 0.0,
            v_z1: 0.0,
            phi_x,
            phase_status: PhaseStatus::Estimated,
            eps_sec,
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_relative_eq!(
            binary_entropy(0.11).unwrap(),
            0.499_915_958_164_528,
            max_relative = 1e-14
        );
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
    }

    #[test]
    fn gamma_vanishes_with_sample_size() {
        let small = gamma_correction(1e-10, 0.02, 1e6, 1e6).unwrap();
        let large = gamma_correction(1e-10, 0.02, 1e8, 1e8).unwrap();
        assert!(large < small && large > 0.0);
    }

    #[test]
    fn gamma_golden() {
        assert_relative_eq!(
            gamma_correction(1e-10, 0.02, 1e5, 1e5).unwrap(),
            0.006_076_341_752_442_798,
            max_relative = 1e-13
        );
    }

    #[test]
    fn gamma_zero_when_log_argument_is_one() {
        let (b, c, d): (f64, f64, f64) = (0.1, 40.0, 60.0);
        let a = 21.0 * ((c + d) / (c * d * (1.0 - b) * b)).sqrt();
        assert!(gamma_correction(a, b, c, d).unwrap().abs() < 1e-6);
        // Past the boundary the log is negative and the correction is 0.
        assert_eq!(gamma_correction(a * 1.01, b, c, d).unwrap(), 0.0);
    }

    #[test]
    fn gamma_rejects_degenerate_rate() {
        assert!(gamma_correction(1e-10, 0.0, 10.0, 10.0).is_err());
        assert!(gamma_correction(1e-10, 1.0, 10.0, 10.0).is_err());
        assert!(gamma_correction(1e-10, 0.1, 0.0, 10.0).is_err());
    }

    #[test]
    fn phase_error_zero_errors_is_regularized() {
        let conf = Confidence::finite(1e-10).unwrap();
        let est = phase_error_rate_upper(0.0, 1e4, 1e5, conf).unwrap();
        assert!(est.regularized);
        assert!(est.phi > 0.0 && est.phi < 0.5);
        let expected = gamma(1e-10, 1.0 / 2e4, 1e4, 1e5);
        assert_relative_eq!(est.phi, expected, max_relative = 1e-15);
    }

    #[test]
    fn phase_error_asymptotic_is_ratio() {
        let est = phase_error_rate_upper(200.0, 1e4, 1e5, Confidence::Asymptotic).unwrap();
        assert_eq!(est.phi, 0.02);
    }

    #[test]
    fn phase_error_golden() {
        let conf = Confidence::finite(1e-10).unwrap();
        let est = phase_error_rate_upper(200.0, 1e4, 1e5, conf).unwrap();
        assert!(!est.regularized);
        assert_relative_eq!(est.phi, 0.034_516_216_805_235_61, max_relative = 1e-13);
    }

    #[test]
    fn phase_error_impossible_without_single_photons() {
        let conf = Confidence::finite(1e-10).unwrap();
        assert_eq!(
            phase_error_rate_upper(0.0, 0.0, 10.0, conf),
            Err(Error::EstimationImpossible)
        );
        assert_eq!(
            phase_error_rate_upper(0.0, 10.0, 0.0, conf),
            Err(Error::EstimationImpossible)
        );
    }

    #[test]
    fn phase_error_caps_at_half() {
        let conf = Confidence::finite(1e-10).unwrap();
        assert_eq!(phase_error_rate_upper(40.0, 100.0, 100.0, conf).unwrap().phi, 0.5);
        assert_eq!(phase_error_rate_upper(80.0, 100.0, 100.0, conf).unwrap().phi, 0.5);
    }

    #[test]
    fn key_length_edges() {
        assert_eq!(key_length(&bounds(0.0, 0.0, 0.0, Some(1e-10)), 0.0, 1e-15), 0);
        // h(1/2) = 1 cancels the single-photon contribution.
        let b = bounds(5_000.0, 80_000.0, 0.5, Some(1e-10));
        let pen = 6.0 * (21.0f64 / 1e-10).log2() + (2.0f64 / 1e-15).log2();
        assert_eq!(key_length(&b, 1_000.0, 1e-15), (4_000.0 - pen).floor() as u64);
        let b = bounds(100.0, 100.0, 0.5, Some(1e-10));
        assert_eq!(key_length(&b, 0.0, 1e-15), 0);
    }

    #[test]
    fn correctness_term_is_exact() {
        let b = bounds(1e5, 1e6, 0.03, Some(1e-10));
        let d = key_length_margin(&b, 1e4, 1e-3) - key_length_margin(&b, 1e4, 1e-15);
        assert_relative_eq!(d, (2.0f64 / 1e-15).log2() - (2.0f64 / 1e-3).log2(), epsilon = 1e-7);
    }

    #[test]
    fn leak_values() {
        assert_eq!(leak_ec(1e6, 1.16, 0.0).unwrap(), 0.0);
        assert_eq!(leak_ec(12_345.0, 1.0, 0.5).unwrap(), 12_345.0);
        assert_relative_eq!(
            leak_ec(1e6, 1.16, 0.02).unwrap(),
            164_071.029_348_511_95,
            max_relative = 1e-13
        );
        assert_eq!(leak_ec(10.0, 1.0, 0.8).unwrap(), 10.0);
        assert!(leak_ec(10.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn budget_no_key_regime() {
        let sol = solve_security_budget(1_000_000, 1e-15, |_| 0).unwrap();
        assert_eq!(sol.ell, 0);
        assert_eq!(sol.eps_sec, None);
    }

    #[test]
    fn budget_kappa_one_is_degenerate() {
        let sol = solve_security_budget(1_000_000, 0.999_999, |_| 1_000).unwrap();
        assert_eq!(sol.ell, 1);
        let sol = solve_security_budget(1_000_000, 1.0, |_| 1_000).unwrap();
        assert_eq!((sol.ell, sol.eps_sec), (0, None));
        assert!(solve_security_budget(1_000_000, 0.0, |_| 1_000).is_err());
    }

    #[test]
    fn budget_fixed_point_resubstitutes() {
        // A toy key length that grows logarithmically with eps_sec.
        let f = |eps: f64| (1e6 + 1e3 * eps.log2()).max(0.0) as u64;
        let sol = solve_security_budget(10_000_000, 1e-15, f).unwrap();
        let eps = sol.eps_sec.unwrap();
        assert_eq!(f(eps), sol.ell);
        assert_eq!(eps, 1e-15 * sol.ell as f64);
    }

    #[test]
    fn params_validation() {
        assert!(SecurityParams::reference().validate().is_ok());
        let mut sp = SecurityParams::reference();
        sp.phi_tol = 0.5;
        assert!(sp.validate().is_err());
        sp = SecurityParams::reference();
        sp.budget = SecrecyBudget::Fixed { eps_sec: 0.0 };
        assert!(sp.validate().is_err());
        sp = SecurityParams::reference();
        sp.f_ec = 0.9;
        assert!(sp.validate().is_err());
    }
}
