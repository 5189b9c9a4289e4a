//! Key-rate maximization over `{q_x, p_mu1, p_mu2, mu1, mu2}`.
//!
//! The search runs Nelder–Mead in unconstrained coordinates `z ∈ R^5`. Each
//! coordinate is mapped through a logistic onto an interval that already
//! encodes the ordering constraints of the earlier coordinates, so every
//! simplex vertex is a valid [`ProtocolPoint`]:
//!
//! ```text
//! q_x  in [q_lo, q_hi]
//! p1   in [p1_lo, p1_hi]
//! p2   in [p2_lo, min(p2_hi, 1 - p1 - m)]
//! mu1  in [max(mu1_lo, 2 mu3 + 3m), min(mu1_hi, 1)]
//! mu2  in [max(mu2_lo, mu3 + m), min(mu2_hi, mu1 - mu3 - m)]
//! ```
//!
//! with feasibility margin `m =` [`FEASIBILITY_MARGIN`].
//!
//! Where no key can be extracted the objective is the (negative) key-length
//! margin per block bit instead of a flat zero, which lets the simplex walk
//! out of no-key regions. Reported rates are always `ell / N`.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{expected_statistics, ChannelParams, ProtocolPoint};
use crate::intensity::IntensitySettings;
use crate::secrecy::{key_rate, KeyRateResult, Regime, SecurityParams};
use crate::{math, Error, Result};

/// Minimum slack kept on every strict inequality of the search space.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;

/// Default weak-decoy intensity.
pub const DEFAULT_MU3: f64 = 2e-4;

const DIM: usize = 5;

/// Starts tried after the hints and before the random ones: a small-block
/// shape (rare signal state, balanced bases) and a large-block shape.
/// On short blocks most of the space has `s_X1 = 0`, a plateau the simplex
/// cannot leave on its own.
pub const BUILTIN_STARTS: [FreeParams; 2] = [
    FreeParams {
        q_x: 0.5,
        p_mu1: 0.05,
        p_mu2: 0.5,
        mu1: 0.5,
        mu2: 0.12,
    },
    FreeParams {
        q_x: 0.9,
        p_mu1: 0.7,
        p_mu2: 0.2,
        mu1: 0.45,
        mu2: 0.17,
    },
];

/// The five parameters the optimizer controls.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FreeParams {
    pub q_x: f64,
    pub p_mu1: f64,
    pub p_mu2: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl FreeParams {
    pub fn intensities(&self, mu3: f64) -> Result<IntensitySettings> {
        IntensitySettings::from_free(self.mu1, self.mu2, mu3, self.p_mu1, self.p_mu2)
    }

    pub fn point(&self, mu3: f64, fixed: &FixedSet) -> Result<ProtocolPoint> {
        let pt = ProtocolPoint {
            q_x: self.q_x,
            intensities: self.intensities(mu3)?,
            n_x_target: fixed.n_x,
            channel: fixed.channel,
            security: fixed.security,
        };
        pt.validate()?;
        Ok(pt)
    }

    pub fn from_point(pt: &ProtocolPoint) -> Self {
        let p = pt.intensities.probabilities();
        Self {
            q_x: pt.q_x,
            p_mu1: p[0],
            p_mu2: p[1],
            mu1: pt.intensities.mu1(),
            mu2: pt.intensities.mu2(),
        }
    }
}

/// Everything held constant during a search.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FixedSet {
    pub channel: ChannelParams,
    pub security: SecurityParams,
    /// Block size `n_X`.
    pub n_x: f64,
}

impl FixedSet {
    pub fn reference(length_km: f64, n_x: f64) -> Self {
        Self {
            channel: ChannelParams::reference(length_km),
            security: SecurityParams::reference(),
            n_x,
        }
    }
}

/// Closed per-parameter intervals intersected with the protocol constraints.
/// Collapsing an interval (`lo == hi`) pins that parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchSpace {
    pub mu3: f64,
    pub q_x: (f64, f64),
    pub p_mu1: (f64, f64),
    pub p_mu2: (f64, f64),
    pub mu1: (f64, f64),
    pub mu2: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            mu3: DEFAULT_MU3,
            q_x: (0.0, 1.0),
            p_mu1: (0.0, 1.0),
            p_mu2: (0.0, 1.0),
            mu1: (0.0, 1.0),
            mu2: (0.0, 1.0),
        }
    }
}

impl SearchSpace {
    /// The space containing only `x`.
    pub fn single(x: FreeParams, mu3: f64) -> Self {
        Self {
            mu3,
            q_x: (x.q_x, x.q_x),
            p_mu1: (x.p_mu1, x.p_mu1),
            p_mu2: (x.p_mu2, x.p_mu2),
            mu1: (x.mu1, x.mu1),
            mu2: (x.mu2, x.mu2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(self.mu3 >= 0.0 && self.mu3 < 0.5) {
            return Err(Error::InvalidArgument {
                name: "mu3",
                reason: "must lie in [0, 0.5)",
            });
        }
        if ![self.q_x, self.p_mu1, self.p_mu2, self.mu1, self.mu2]
            .into_iter()
            .all(ok)
        {
            return Err(Error::InvalidArgument {
                name: "search space",
                reason: "every interval must be finite with lo <= hi",
            });
        }
        Ok(())
    }

    pub fn contains(&self, x: &FreeParams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(x.q_x, self.q_x)
            && inside(x.p_mu1, self.p_mu1)
            && inside(x.p_mu2, self.p_mu2)
            && inside(x.mu1, self.mu1)
            && inside(x.mu2, self.mu2)
            && x.intensities(self.mu3).is_ok()
            && x.q_x > 0.0
            && x.q_x < 1.0
    }

    /// Effective intervals given the values already chosen for earlier
    /// coordinates; `None` when one of them is empty.
    fn intervals(&self, p1: f64, mu1: f64) -> [Option<(f64, f64)>; DIM] {
        let m = FEASIBILITY_MARGIN;
        let cut = |(lo, hi): (f64, f64), a: f64, b: f64| {
            let (lo, hi) = (lo.max(a), hi.min(b));
            (lo <= hi).then_some((lo, hi))
        };
        [
            cut(self.q_x, m, 1.0 - m),
            cut(self.p_mu1, m, 1.0 - 2.0 * m),
            cut(self.p_mu2, m, 1.0 - p1 - m),
            cut(self.mu1, 2.0 * self.mu3 + 3.0 * m, 1.0),
            cut(self.mu2, self.mu3 + m, mu1 - self.mu3 - m),
        ]
    }

    /// Maps unconstrained coordinates onto the space.
    pub fn from_unconstrained(&self, z: &[f64; DIM]) -> Option<FreeParams> {
        let place = |(lo, hi): (f64, f64), z: f64| lo + (hi - lo) * sigmoid(z);
        let iv = self.intervals(0.0, 1.0);
        let q_x = place(iv[0]?, z[0]);
        let p_mu1 = place(iv[1]?, z[1]);
        let mu1 = place(iv[3]?, z[3]);
        let iv = self.intervals(p_mu1, mu1);
        let p_mu2 = place(iv[2]?, z[2]);
        let mu2 = place(iv[4]?, z[4]);
        Some(FreeParams {
            q_x,
            p_mu1,
            p_mu2,
            mu1,
            mu2,
        })
    }

    /// Inverse of [`Self::from_unconstrained`], clamped into the space.
    pub fn to_unconstrained(&self, x: &FreeParams) -> Option<[f64; DIM]> {
        let iv = self.intervals(x.p_mu1, x.mu1);
        let place = |(lo, hi): (f64, f64), v: f64| {
            if hi > lo {
                logit(((v - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12))
            } else {
                0.0
            }
        };
        Some([
            place(iv[0]?, x.q_x),
            place(iv[1]?, x.p_mu1),
            place(iv[2]?, x.p_mu2),
            place(iv[3]?, x.mu1),
            place(iv[4]?, x.mu2),
        ])
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + math::exp(-z))
}

fn logit(t: f64) -> f64 {
    math::ln(t / (1.0 - t))
}

/// Expected statistics → decoy bounds → secrecy budget → `R = ell / N`.
pub fn evaluate_rate(pt: &ProtocolPoint, regime: Regime) -> Result<KeyRateResult> {
    let stats = expected_statistics(pt)?;
    key_rate(
        &stats.counts,
        &pt.intensities,
        &pt.security,
        regime,
        stats.pulses,
        false,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    /// Total objective evaluations across all starts.
    pub budget: usize,
    /// Latin-hypercube starts, run after the hints and [`BUILTIN_STARTS`].
    pub starts: usize,
    pub seed: u64,
    pub regime: Regime,
    /// Extra starting points, tried before the random starts.
    pub hints: Vec<FreeParams>,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            budget: 5000,
            starts: 8,
            seed: 0,
            regime: Regime::Finite,
            hints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceEntry {
    /// Evaluation index at which the improvement was found.
    pub evaluation: usize,
    pub params: FreeParams,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub best: FreeParams,
    pub best_point: ProtocolPoint,
    pub best_rate: f64,
    pub result: KeyRateResult,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
}

/// Search state shared by all starts.
struct Search<'a> {
    space: &'a SearchSpace,
    fixed: &'a FixedSet,
    regime: Regime,
    evaluations: usize,
    best: Option<(f64, FreeParams, KeyRateResult)>,
    trace: Vec<TraceEntry>,
    /// First evaluation error, reported when no point evaluates.
    error: Option<Error>,
}

impl Search<'_> {
    fn score(&mut self, x: &FreeParams) -> f64 {
        self.evaluations += 1;
        let Ok(pt) = x.point(self.space.mu3, self.fixed) else {
            return f64::NEG_INFINITY;
        };
        let res = match evaluate_rate(&pt, self.regime) {
            Ok(res) => res,
            Err(e) => {
                self.error.get_or_insert(e);
                return f64::NEG_INFINITY;
            }
        };
        let s = if res.ell > 0 {
            res.rate
        } else {
            res.margin_bits.min(0.0) / self.fixed.n_x
        };
        if !s.is_finite() {
            return f64::NEG_INFINITY;
        }
        if self.best.as_ref().is_none_or(|(b, _, _)| s > *b) {
            if res.rate > self.trace.last().map_or(0.0, |t| t.rate) {
                self.trace.push(TraceEntry {
                    evaluation: self.evaluations,
                    params: *x,
                    rate: res.rate,
                });
            }
            self.best = Some((s, *x, res));
        }
        s
    }

    fn score_z(&mut self, z: &[f64; DIM]) -> f64 {
        match self.space.from_unconstrained(z) {
            Some(x) => self.score(&x),
            None => {
                self.evaluations += 1;
                f64::NEG_INFINITY
            }
        }
    }
}

/// Multi-start Nelder–Mead; deterministic for a given `seed` and `budget`.
///
/// When no evaluated point yields a key, the result carries the point
/// closest to producing one and `best_rate = 0`.
pub fn optimize(space: &SearchSpace, fixed: &FixedSet, opts: &OptimizerOptions) -> Result<OptResult> {
    space.validate()?;
    if opts.budget == 0 {
        return Err(Error::InvalidArgument {
            name: "budget",
            reason: "must be >= 1",
        });
    }
    let mut search = Search {
        space,
        fixed,
        regime: opts.regime,
        evaluations: 0,
        best: None,
        trace: Vec::new(),
        error: None,
    };

    let mut starts: Vec<[f64; DIM]> = opts
        .hints
        .iter()
        .chain(&BUILTIN_STARTS)
        .filter_map(|h| space.to_unconstrained(h))
        .collect();
    starts.extend(latin_hypercube(opts.starts, opts.seed));
    let per_start = (opts.budget / starts.len().max(1)).max(DIM + 2);

    for z0 in &starts {
        let left = opts.budget.saturating_sub(search.evaluations);
        if left == 0 {
            break;
        }
        nelder_mead(|z| -search.score_z(z), *z0, 0.6, per_start.min(left));
    }

    let Some((_, best, result)) = search.best else {
        return Err(search.error.unwrap_or(Error::InvalidArgument {
            name: "search space",
            reason: "contains no feasible point",
        }));
    };
    let best_point = best.point(space.mu3, fixed)?;
    Ok(OptResult {
        best,
        best_point,
        best_rate: result.rate,
        result,
        evaluations: search.evaluations,
        trace: search.trace,
    })
}

/// Evaluates every candidate and returns the best; ties keep the earliest.
pub fn best_of(candidates: &[FreeParams], mu3: f64, fixed: &FixedSet, regime: Regime) -> Result<OptResult> {
    let mut best: Option<(FreeParams, ProtocolPoint, KeyRateResult)> = None;
    let mut trace = Vec::new();
    for (i, x) in candidates.iter().enumerate() {
        let pt = x.point(mu3, fixed)?;
        let res = evaluate_rate(&pt, regime)?;
        if best.as_ref().is_none_or(|(_, _, b)| res.rate > b.rate) {
            if res.rate > 0.0 {
                trace.push(TraceEntry {
                    evaluation: i + 1,
                    params: *x,
                    rate: res.rate,
                });
            }
            best = Some((*x, pt, res));
        }
    }
    let (best, best_point, result) = best.ok_or(Error::InvalidArgument {
        name: "candidates",
        reason: "must not be empty",
    })?;
    Ok(OptResult {
        best,
        best_point,
        best_rate: result.rate,
        result,
        evaluations: candidates.len(),
        trace,
    })
}

/// `n` stratified points in `[-3, 3]^5`.
fn latin_hypercube(n: usize, seed: u64) -> Vec<[f64; DIM]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = alloc::vec![[0.0; DIM]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..DIM {
        strata.shuffle(&mut rng);
        for (pt, &s) in pts.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            pt[d] = -3.0 + 6.0 * (s as f64 + u) / n as f64;
        }
    }
    pts
}

/// Minimizes `f` from `x0` with an axis-aligned initial simplex of edge
/// `step`, stopping after `max_evals` evaluations or when the simplex has
/// collapsed.
fn nelder_mead<F>(mut f: F, x0: [f64; DIM], step: f64, max_evals: usize) -> ([f64; DIM], f64)
where
    F: FnMut(&[f64; DIM]) -> f64,
{
    let mut evals = 0usize;
    let mut eval = |x: &[f64; DIM], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<([f64; DIM], f64)> = Vec::with_capacity(DIM + 1);
    let f0 = eval(&x0, &mut evals);
    simplex.push((x0, f0));
    for d in 0..DIM {
        if evals >= max_evals {
            return (x0, f0);
        }
        let mut x = x0;
        x[d] += step;
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    let along = |a: &[f64; DIM], b: &[f64; DIM], t: f64| {
        let mut out = [0.0; DIM];
        for i in 0..DIM {
            out[i] = a[i] + t * (b[i] - a[i]);
        }
        out
    };

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[DIM].1);
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if size < 1e-7 || (best.is_finite() && (worst - best).abs() <= 1e-14 * best.abs().max(1e-300) && size < 1e-3) {
            break;
        }

        let mut centroid = [0.0; DIM];
        for (x, _) in &simplex[..DIM] {
            for i in 0..DIM {
                centroid[i] += x[i] / DIM as f64;
            }
        }
        let xw = simplex[DIM].0;
        let xr = along(&centroid, &xw, -1.0);
        let fr = eval(&xr, &mut evals);

        if fr < simplex[0].1 {
            let xe = along(&centroid, &xw, -2.0);
            let fe = eval(&xe, &mut evals);
            simplex[DIM] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[DIM - 1].1 {
            simplex[DIM] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[DIM].1 {
                let xc = along(&centroid, &xr, 0.5);
                (xc, eval(&xc, &mut evals))
            } else {
                let xc = along(&centroid, &xw, 0.5);
                (xc, eval(&xc, &mut evals))
            };
            if fc < fr.min(simplex[DIM].1) {
                simplex[DIM] = (xc, fc);
            } else {
                let x0 = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    if evals >= max_evals {
                        break;
                    }
                    v.0 = along(&x0, &v.0, 0.5);
                    v.1 = eval(&v.0, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}
