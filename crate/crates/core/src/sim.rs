//! Pulse-level Monte Carlo of the honest protocol with photon-number ground
//! truth.
//!
//! Per pulse: intensity `k ~ p`, both bases independently with `P(X) = q_x`,
//! and for matching bases a photon number `n ~ Poisson(k)` truncated into a
//! top bin at `n_max`. The `n`-photon pulse clicks with probability
//!
//! ```text
//! Y_n = 1 - (1 - 2 p_dc) (1 - eta_sys)^n
//! ```
//!
//! and, given a click, is in error with probability
//! `[p_dc + e_mis (1 - (1 - eta)^n)] / Y_n`. Each click spawns an afterpulse
//! click with probability `p_ap` carrying a uniformly random bit. Averaged
//! over `n` these reproduce `D_k`, `R_k` and `e_k` of the channel model
//! exactly.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::ProtocolPoint;
use crate::counts::ObservedCounts;
use crate::decoy::{BoundEstimates, Confidence, PhaseStatus};
use crate::intensity::IntensitySettings;
use crate::secrecy::estimate_bounds;
use crate::{math, Error, Result};

/// Smallest accepted photon-number truncation.
pub const MIN_N_MAX: u32 = 10;

/// Largest Poisson tail mass allowed beyond `n_max`.
pub const MAX_TAIL_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub seed: u64,
    pub pulses: u64,
    pub n_max: u32,
    pub point: ProtocolPoint,
    /// Misalignment applied to Z-basis clicks instead of `e_mis`. Any value
    /// different from `e_mis` breaks basis symmetry, so the counter-factual
    /// phase errors are not sampled.
    pub z_misalignment: Option<f64>,
}

impl SimConfig {
    pub fn new(seed: u64, pulses: u64, point: ProtocolPoint) -> Result<Self> {
        let cfg = Self {
            seed,
            pulses,
            n_max: required_n_max(point.intensities.mu1()),
            point,
            z_misalignment: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.point.validate()?;
        if self.n_max < MIN_N_MAX {
            return Err(Error::InvalidSimConfig("n_max must be >= 10"));
        }
        if poisson_tail(self.point.intensities.mu1(), self.n_max) >= MAX_TAIL_MASS {
            return Err(Error::InvalidSimConfig("n_max leaves a Poisson tail >= 1e-12"));
        }
        if let Some(e) = self.z_misalignment {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidSimConfig("z misalignment must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Whether both bases share one error model.
    pub fn basis_symmetric(&self) -> bool {
        self.z_misalignment.is_none_or(|e| e == self.point.channel.e_mis)
    }
}

/// `P(N > n)` for `N ~ Poisson(mu)`, summed directly over the tail.
fn poisson_tail(mu: f64, n: u32) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    (n + 1..n + 400)
        .map(|j| math::exp(-mu + f64::from(j) * math::ln(mu) - math::ln_factorial(j)))
        .sum()
}

/// Smallest `n_max >= 10` whose neglected tail is below 1e-12.
pub fn required_n_max(mu1: f64) -> u32 {
    let mut n = MIN_N_MAX;
    while poisson_tail(mu1, n) >= MAX_TAIL_MASS {
        n += 1;
    }
    n
}

/// Photon-number-resolved tallies, indexed `[intensity][n]` with `n` in
/// `0..=n_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruth {
    /// Detections in the X-basis key sample.
    pub s_x: [Vec<u64>; 3],
    /// Sifted Z-basis detections.
    pub s_z: [Vec<u64>; 3],
    /// Bit errors among sifted Z-basis detections.
    pub v_z: [Vec<u64>; 3],
    /// Phase errors among single-photon key-sample detections; `None` when
    /// the channel is not basis-symmetric.
    pub c_x1: Option<u64>,
}

impl GroundTruth {
    fn zeros(n_max: u32) -> Self {
        let z = || {
            [
                vec![0; n_max as usize + 1],
                vec![0; n_max as usize + 1],
                vec![0; n_max as usize + 1],
            ]
        };
        Self {
            s_x: z(),
            s_z: z(),
            v_z: z(),
            c_x1: None,
        }
    }

    fn by_photons(t: &[Vec<u64>; 3], n: usize) -> u64 {
        t.iter().map(|v| v.get(n).copied().unwrap_or(0)).sum()
    }

    pub fn s_x_n(&self, n: usize) -> u64 {
        Self::by_photons(&self.s_x, n)
    }

    pub fn s_z_n(&self, n: usize) -> u64 {
        Self::by_photons(&self.s_z, n)
    }

    pub fn v_z_n(&self, n: usize) -> u64 {
        Self::by_photons(&self.v_z, n)
    }

    pub fn s_x_total(&self) -> u64 {
        self.s_x.iter().flatten().sum()
    }
}

/// Counter-factual phase-error count `c_X1`.
pub fn phase_error_ground_truth(gt: &GroundTruth) -> Result<u64> {
    gt.c_x1.ok_or(Error::GroundTruthUnavailable)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimOutcome {
    pub counts: ObservedCounts,
    pub truth: GroundTruth,
    pub pulses: u64,
    /// Sifted X-basis detections before block sampling.
    pub x_available: u64,
    /// `false` when fewer than `n_X` sifted X detections were available; the
    /// block then holds all of them.
    pub block_filled: bool,
}

#[derive(Clone, Copy)]
struct XEvent {
    k: u8,
    n: u16,
    error: bool,
    /// Error probability of this click, reused for the counter-factual.
    p_err: f64,
}

/// Per-basis conditional error probabilities `P(error | click, n)`.
fn conditional_errors(y: &[f64], p_dc: f64, e_mis: f64, eta_mis: f64) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(n, &yn)| {
            if yn <= 0.0 {
                return 0.5;
            }
            let miss = 1.0 - math::powi(1.0 - eta_mis, n as i32);
            math::clamp((p_dc + e_mis * miss) / yn, 0.0, 1.0)
        })
        .collect()
}

/// Runs one protocol instance; bit-identical for identical configs.
pub fn simulate_run(cfg: &SimConfig) -> Result<SimOutcome> {
    cfg.validate()?;
    let pt = &cfg.point;
    let ch = &pt.channel;
    let n_max = cfg.n_max as usize;
    let mu = pt.intensities.mu();
    let p = pt.intensities.probabilities();

    // Inverse-CDF tables; the top bin absorbs the tail.
    let cdf: Vec<Vec<f64>> = mu
        .iter()
        .map(|&k| {
            let mut acc = 0.0;
            (0..n_max)
                .map(|n| {
                    acc += if k == 0.0 {
                        if n == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        math::exp(-k + n as f64 * math::ln(k) - math::ln_factorial(n as u32))
                    };
                    acc
                })
                .collect()
        })
        .collect();
    let eta = ch.eta_sys();
    let y: Vec<f64> = (0..=n_max)
        .map(|n| 1.0 - (1.0 - 2.0 * ch.p_dc) * math::powi(1.0 - eta, n as i32))
        .collect();
    let err_x = conditional_errors(&y, ch.p_dc, ch.e_mis, ch.eta_misalignment());
    let err_z = conditional_errors(
        &y,
        ch.p_dc,
        cfg.z_misalignment.unwrap_or(ch.e_mis),
        ch.eta_misalignment(),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut truth = GroundTruth::zeros(cfg.n_max);
    let mut counts = ObservedCounts::default();
    let mut x_events: Vec<XEvent> = Vec::new();
    let (p1, p12) = (p[0], p[0] + p[1]);

    for _ in 0..cfg.pulses {
        let u: f64 = rng.random();
        let k = if u < p1 {
            0
        } else if u < p12 {
            1
        } else {
            2
        };
        let alice_x = rng.random::<f64>() < pt.q_x;
        let bob_x = rng.random::<f64>() < pt.q_x;
        if alice_x != bob_x {
            continue;
        }
        let u: f64 = rng.random();
        let n = cdf[k].iter().position(|&c| u < c).unwrap_or(n_max);
        if rng.random::<f64>() >= y[n] {
            continue;
        }
        let p_err = if alice_x { err_x[n] } else { err_z[n] };
        let mut clicks = [(rng.random::<f64>() < p_err, p_err), (false, 0.0)];
        let mut count = 1;
        if ch.p_ap > 0.0 && rng.random::<f64>() < ch.p_ap {
            clicks[1] = (rng.random::<bool>(), 0.5);
            count = 2;
        }
        for &(error, p_err) in &clicks[..count] {
            if alice_x {
                x_events.push(XEvent {
                    k: k as u8,
                    n: n as u16,
                    error,
                    p_err,
                });
            } else {
                counts.n_z[k] += 1.0;
                truth.s_z[k][n] += 1;
                if error {
                    counts.m_z[k] += 1.0;
                    truth.v_z[k][n] += 1;
                }
            }
        }
    }

    let x_available = x_events.len() as u64;
    let target = if pt.n_x_target >= x_available as f64 {
        x_available
    } else {
        math::floor(pt.n_x_target) as u64
    };
    // Partial Fisher–Yates: the first `target` slots are a uniform sample
    // without replacement.
    let target_len = target as usize;
    for i in 0..target_len.min(x_events.len().saturating_sub(1)) {
        let j = rng.random_range(i..x_events.len());
        x_events.swap(i, j);
    }
    x_events.truncate(target_len);

    let symmetric = cfg.basis_symmetric();
    let mut c_x1 = 0u64;
    for ev in &x_events {
        let (k, n) = (ev.k as usize, ev.n as usize);
        counts.n_x[k] += 1.0;
        truth.s_x[k][n] += 1;
        if ev.error {
            counts.m_x[k] += 1.0;
        }
        if symmetric && n == 1 && rng.random::<f64>() < ev.p_err {
            c_x1 += 1;
        }
    }
    truth.c_x1 = symmetric.then_some(c_x1);

    Ok(SimOutcome {
        counts,
        truth,
        pulses: cfg.pulses,
        x_available,
        block_filled: x_available as f64 >= pt.n_x_target,
    })
}

/// Labels of the five one-sided bounds, in report order.
pub const BOUND_NAMES: [&str; 5] = ["s_X0", "s_X1", "s_Z1", "v_Z1", "phi_X"];

/// Hoeffding terms (of probability `eps_sec / 21` each) a bound relies on,
/// counting the terms inherited from the bounds it is built from.
pub const BOUND_SHARES: [f64; 5] = [2.0, 5.0, 5.0, 2.0, 13.0];

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundCheck {
    pub bound: f64,
    pub truth: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ViolationReport {
    pub s_x0: BoundCheck,
    pub s_x1: BoundCheck,
    pub s_z1: BoundCheck,
    pub v_z1: BoundCheck,
    /// `None` when the phase bound could not be checked: no counter-factual,
    /// no single-photon key events, or an impossible estimate.
    pub phi_x: Option<BoundCheck>,
    pub bounds: BoundEstimates,
}

impl ViolationReport {
    /// Checks in [`BOUND_NAMES`] order.
    pub fn checks(&self) -> [Option<BoundCheck>; 5] {
        [
            Some(self.s_x0),
            Some(self.s_x1),
            Some(self.s_z1),
            Some(self.v_z1),
            self.phi_x,
        ]
    }

    pub fn any_violation(&self) -> bool {
        self.checks().iter().flatten().any(|c| c.violated)
    }
}

/// Compares every bound computed from `counts` with the ground truth.
pub fn verify_bounds(
    counts: &ObservedCounts,
    gt: &GroundTruth,
    s: &IntensitySettings,
    conf: Confidence,
) -> ViolationReport {
    let b = estimate_bounds(counts, s, conf);
    let lower = |bound: f64, truth: u64| BoundCheck {
        bound,
        truth: truth as f64,
        violated: (truth as f64) < bound,
    };
    let s_x1_true = gt.s_x_n(1);
    let phi_x = match (gt.c_x1, b.phase_status) {
        (Some(c), PhaseStatus::Estimated | PhaseStatus::Regularized) if s_x1_true > 0 => {
            // A bound pinned at 1/2 claims nothing: h is maximal there.
            let truth = c as f64 / s_x1_true as f64;
            Some(BoundCheck {
                bound: b.phi_x,
                truth,
                violated: b.phi_x < 0.5 && truth > b.phi_x,
            })
        }
        _ => None,
    };
    let v_true = gt.v_z_n(1) as f64;
    ViolationReport {
        s_x0: lower(b.s_x0, gt.s_x_n(0)),
        s_x1: lower(b.s_x1, s_x1_true),
        s_z1: lower(b.s_z1, gt.s_z_n(1)),
        v_z1: BoundCheck {
            bound: b.v_z1,
            truth: v_true,
            violated: v_true > b.v_z1,
        },
        phi_x,
        bounds: b,
    }
}

/// Violation frequencies over many runs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoverageTally {
    pub checked: [u64; 5],
    pub violated: [u64; 5],
}

impl CoverageTally {
    pub fn add(&mut self, report: &ViolationReport) {
        for (i, c) in report.checks().iter().enumerate() {
            if let Some(c) = c {
                self.checked[i] += 1;
                self.violated[i] += u64::from(c.violated);
            }
        }
    }

    pub fn frequency(&self, i: usize) -> f64 {
        if self.checked[i] == 0 {
            0.0
        } else {
            self.violated[i] as f64 / self.checked[i] as f64
        }
    }

    /// Failure budget of bound `i` when each Hoeffding term fails with
    /// probability `per_term_eps`.
    pub fn budget(i: usize, per_term_eps: f64) -> f64 {
        (BOUND_SHARES[i] * per_term_eps).min(1.0)
    }

    /// Budget plus three binomial standard deviations at the checked count.
    pub fn limit(&self, i: usize, per_term_eps: f64) -> f64 {
        let b = Self::budget(i, per_term_eps);
        let n = self.checked[i].max(1) as f64;
        b + 3.0 * math::sqrt(b * (1.0 - b) / n)
    }

    pub fn within_budget(&self, i: usize, per_term_eps: f64) -> bool {
        self.frequency(i) <= self.limit(i, per_term_eps)
    }
}
