//! The four subcommands, independent of argument parsing and file IO.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use decoy_core::sim::{BoundCheck, BOUND_NAMES};
use decoy_core::{
    evaluate_rate, key_rate, optimize as run_optimizer, simulate_run, verify_bounds, BoundEstimates, Confidence,
    CoverageTally, Error as CoreError, FreeParams, KeyRateResult, ObservedCounts, OptimizerOptions, Regime, SimConfig,
    ViolationReport,
};

use crate::config::RunConfig;
use crate::table::{sci, Outcome, Row};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("cannot start worker threads: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

fn regime(asymptotic: bool) -> Regime {
    if asymptotic {
        Regime::Asymptotic
    } else {
        Regime::Finite
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CommandError> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// A single evaluated point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub row: Row,
    pub result: KeyRateResult,
    /// Objective evaluations spent, for optimized points.
    pub evaluations: Option<usize>,
}

impl PointReport {
    /// Every intermediate quantity as `label value` lines.
    pub fn labeled(&self) -> String {
        let r = &self.result;
        let b = &r.bounds;
        let Outcome::Evaluated { params: x, .. } = &self.row.outcome else {
            unreachable!("point reports are always evaluated")
        };
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k:<10} {v}").expect("string write");
        line("L_km", sci(self.row.length_km));
        line("n_X", self.row.n_x.map_or_else(|| "inf".into(), sci));
        line("q_x", sci(x.q_x));
        line("p_mu1", sci(x.p_mu1));
        line("p_mu2", sci(x.p_mu2));
        line("mu1", sci(x.mu1));
        line("mu2", sci(x.mu2));
        line("s_X0", sci(b.s_x0));
        line("s_X1", sci(b.s_x1));
        line("s_Z1", sci(b.s_z1));
        line("v_Z1", sci(b.v_z1));
        line("phi_X", sci(b.phi_x));
        line("e_obs", sci(r.e_obs));
        line("leak_EC", sci(r.leak_ec));
        line("eps_sec", r.eps_sec.map_or_else(|| "-".into(), sci));
        line("ell", r.ell.to_string());
        line("N", sci(r.pulses));
        line("R", sci(r.rate));
        line("aborted", r.aborted.to_string());
        if let Some(n) = self.evaluations {
            line("evals", n.to_string());
        }
        s
    }
}

/// Evaluates the configured operating point.
pub fn keyrate(cfg: &RunConfig) -> Result<PointReport, CommandError> {
    let pt = cfg.protocol_point()?;
    let result = evaluate_rate(&pt, regime(cfg.asymptotic))?;
    Ok(PointReport {
        row: Row {
            length_km: cfg.channel.length_km,
            n_x: (!cfg.asymptotic).then_some(cfg.n_x),
            outcome: Outcome::Evaluated {
                params: cfg.point,
                result,
            },
        },
        result,
        evaluations: None,
    })
}

fn options(cfg: &RunConfig, asymptotic: bool, hints: Vec<FreeParams>) -> OptimizerOptions {
    OptimizerOptions {
        budget: cfg.budget,
        starts: cfg.starts,
        seed: cfg.seed,
        regime: regime(asymptotic),
        hints,
    }
}

/// Optimizes the free parameters at the configured distance and block size,
/// starting from the configured point among others.
pub fn optimize(cfg: &RunConfig) -> Result<PointReport, CommandError> {
    let opt = run_optimizer(&cfg.space, &cfg.fixed(), &options(cfg, cfg.asymptotic, vec![cfg.point]))?;
    Ok(PointReport {
        row: Row {
            length_km: cfg.channel.length_km,
            n_x: (!cfg.asymptotic).then_some(cfg.n_x),
            outcome: Outcome::Evaluated {
                params: opt.best,
                result: opt.result,
            },
        },
        result: opt.result,
        evaluations: Some(opt.evaluations),
    })
}

/// Optimized rows at one distance.
///
/// Block sizes run in ascending order, each warm-started from the previous
/// optimum. Since `R` grows with `n_X` at fixed parameters, the rows are then
/// non-decreasing in `n_X`. The asymptotic row starts from the last finite
/// optimum and is evaluated on the largest block.
fn sweep_distance(cfg: &RunConfig, length_km: f64, blocks: &[f64]) -> Vec<Row> {
    let mut rows = Vec::new();
    let mut hint: Option<FreeParams> = None;
    let run = |n_x: f64, asymptotic: bool, hint: &mut Option<FreeParams>| {
        let opts = options(cfg, asymptotic, hint.iter().copied().collect());
        let outcome = match run_optimizer(&cfg.space, &cfg.fixed_at(length_km, n_x), &opts) {
            Ok(opt) => {
                *hint = Some(opt.best);
                Outcome::Evaluated {
                    params: opt.best,
                    result: opt.result,
                }
            }
            Err(e) => Outcome::Failed(e.to_string()),
        };
        Row {
            length_km,
            n_x: (!asymptotic).then_some(n_x),
            outcome,
        }
    };
    if !cfg.asymptotic {
        for &n_x in blocks {
            rows.push(run(n_x, false, &mut hint));
        }
    }
    if cfg.asymptotic || cfg.asymptotic_curve {
        let n_x = if cfg.asymptotic {
            cfg.n_x
        } else {
            blocks[blocks.len() - 1]
        };
        rows.push(run(n_x, true, &mut hint));
    }
    rows
}

/// Optimized rate over the `lengths` x `block_sizes` grid.
///
/// Rows are ordered by distance, then ascending block size, then the
/// asymptotic row, independent of the worker count.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<Row>, CommandError> {
    let mut blocks = cfg.block_sizes.clone();
    blocks.sort_by(f64::total_cmp);
    blocks.dedup();
    let per_length: Vec<Vec<Row>> = pool(cfg.workers)?.install(|| {
        cfg.lengths
            .par_iter()
            .map(|&l| sweep_distance(cfg, l, &blocks))
            .collect()
    });
    Ok(per_length.into_iter().flatten().collect())
}

/// One checked bound in a run record.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: &'static str,
    pub bound: f64,
    pub truth: f64,
    pub violated: bool,
}

/// One line of the per-run JSONL output.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub block_filled: bool,
    pub x_available: u64,
    pub counts: ObservedCounts,
    pub bounds: BoundEstimates,
    pub checks: Vec<CheckRecord>,
    pub violations: Vec<&'static str>,
    pub ell: u64,
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct Coverage {
    pub records: Vec<RunRecord>,
    pub tally: CoverageTally,
    pub per_term_eps: f64,
    pub first_seed: u64,
    pub pulses: u64,
}

impl Coverage {
    pub fn passed(&self) -> bool {
        (0..BOUND_NAMES.len()).all(|i| self.tally.within_budget(i, self.per_term_eps))
    }

    /// Per-bound violation frequencies against budget plus three binomial
    /// standard deviations; byte-identical for identical inputs.
    pub fn report(&self) -> String {
        let runs = self.records.len() as u64;
        let mut s = String::new();
        let last = self.first_seed.wrapping_add(runs.saturating_sub(1));
        writeln!(
            s,
            "coverage: {runs} runs x {} pulses, seeds {}..={last}, per-term eps {}",
            self.pulses,
            self.first_seed,
            sci(self.per_term_eps)
        )
        .expect("string write");
        writeln!(
            s,
            "{:<6} {:>8} {:>8} {:>15} {:>15} {:>15}  status",
            "bound", "checked", "violated", "frequency", "budget", "limit"
        )
        .expect("string write");
        for (i, name) in BOUND_NAMES.iter().enumerate() {
            let t = &self.tally;
            let status = match (t.checked[i], t.within_budget(i, self.per_term_eps)) {
                (0, _) => "unchecked",
                (_, true) => "ok",
                (_, false) => "FAIL",
            };
            writeln!(
                s,
                "{name:<6} {:>8} {:>8} {:>15} {:>15} {:>15}  {status}",
                t.checked[i],
                t.violated[i],
                sci(t.frequency(i)),
                sci(CoverageTally::budget(i, self.per_term_eps)),
                sci(t.limit(i, self.per_term_eps)),
            )
            .expect("string write");
        }
        writeln!(s, "result: {}", if self.passed() { "pass" } else { "FAIL" }).expect("string write");
        s
    }
}

fn run_once(cfg: &RunConfig, seed: u64, conf: Confidence) -> Result<(RunRecord, ViolationReport), CoreError> {
    let pt = cfg.protocol_point()?;
    let mut sim = SimConfig::new(seed, cfg.pulses, pt)?;
    if let Some(n) = cfg.n_max {
        sim.n_max = n;
    }
    sim.z_misalignment = cfg.z_misalignment;
    let out = simulate_run(&sim)?;
    let report = verify_bounds(&out.counts, &out.truth, &pt.intensities, conf);
    let key = key_rate(
        &out.counts,
        &pt.intensities,
        &pt.security,
        Regime::Finite,
        out.pulses as f64,
        true,
    )?;
    let checks: Vec<CheckRecord> = report
        .checks()
        .iter()
        .zip(BOUND_NAMES)
        .filter_map(|(c, name)| {
            c.map(|BoundCheck { bound, truth, violated }| CheckRecord {
                name,
                bound,
                truth,
                violated,
            })
        })
        .collect();
    let record = RunRecord {
        seed,
        block_filled: out.block_filled,
        x_available: out.x_available,
        counts: out.counts,
        bounds: report.bounds,
        violations: checks.iter().filter(|c| c.violated).map(|c| c.name).collect(),
        checks,
        ell: key.ell,
        aborted: key.aborted,
    };
    Ok((record, report))
}

/// Runs `cfg.runs` seeded simulations and tallies bound violations.
///
/// Run `i` uses seed `cfg.seed + i`. Bounds are evaluated at the fixed
/// `coverage_eps_sec`; the key length uses the configured security budget.
pub fn simulate(cfg: &RunConfig) -> Result<Coverage, CommandError> {
    let conf = Confidence::finite(cfg.coverage_eps_sec)?;
    let runs: Vec<(RunRecord, ViolationReport)> = pool(cfg.workers)?.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|i| run_once(cfg, cfg.seed.wrapping_add(i), conf))
            .collect::<Result<_, _>>()
    })?;
    let mut tally = CoverageTally::default();
    let records = runs
        .into_iter()
        .map(|(record, report)| {
            tally.add(&report);
            record
        })
        .collect();
    Ok(Coverage {
        records,
        tally,
        per_term_eps: conf.per_term_eps(),
        first_seed: cfg.seed,
        pulses: cfg.pulses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> RunConfig {
        RunConfig::parse(text, "test").unwrap()
    }

    #[test]
    fn keyrate_at_fifty_km_yields_key() {
        let r = keyrate(&cfg("")).unwrap();
        assert!(r.result.rate > 0.0);
        assert!(r.labeled().contains("s_X1"));
    }

    #[test]
    fn asymptotic_keyrate_marks_row() {
        let r = keyrate(&cfg("asymptotic = true\n")).unwrap();
        assert_eq!(r.row.n_x, None);
        assert_eq!(r.result.eps_sec, None);
    }

    #[test]
    fn optimize_improves_on_configured_point() {
        let c = cfg("budget = 400\n");
        let base = keyrate(&c).unwrap().result.rate;
        let opt = optimize(&c).unwrap();
        assert!(opt.result.rate >= base);
        assert!(opt.evaluations.unwrap() <= 400);
    }

    #[test]
    fn sweep_orders_rows_and_warm_starts() {
        let c = cfg("lengths = 40,0,20\nblock_sizes = 1e8,1e6\nasymptotic_curve = true\nbudget = 300\n");
        let rows = sweep(&c).unwrap();
        let keys: Vec<(f64, Option<f64>)> = rows.iter().map(|r| (r.length_km, r.n_x)).collect();
        assert_eq!(
            keys,
            vec![
                (40.0, Some(1e6)),
                (40.0, Some(1e8)),
                (40.0, None),
                (0.0, Some(1e6)),
                (0.0, Some(1e8)),
                (0.0, None),
                (20.0, Some(1e6)),
                (20.0, Some(1e8)),
                (20.0, None),
            ]
        );
        for chunk in rows.chunks(3) {
            let r: Vec<f64> = chunk.iter().map(|r| r.rate().unwrap()).collect();
            assert!(r[0] <= r[1] && r[1] <= r[2], "{r:?}");
        }
    }

    #[test]
    fn sweep_records_failures_in_row() {
        let rows = sweep(&cfg(
            "eta_bob = 0\np_dc = 0\nlengths = 0\nblock_sizes = 1e6\nbudget = 50\n",
        ))
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(
            rows[0].outcome,
            Outcome::Failed("no detections possible with these parameters".into())
        );
    }

    #[test]
    fn sweep_is_worker_independent() {
        let base = "lengths = 0:30:10\nblock_sizes = 1e5\nbudget = 200\n";
        let one = sweep(&cfg(&format!("{base}workers = 1\n"))).unwrap();
        let four = sweep(&cfg(&format!("{base}workers = 4\n"))).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn simulate_is_deterministic() {
        let c = cfg("length_km = 0\nq_x = 0.5\nruns = 4\npulses = 200000\nseed = 7\n");
        let a = simulate(&c).unwrap();
        let b = simulate(&c).unwrap();
        assert_eq!(a.report(), b.report());
        assert_eq!(a.records[3].seed, 10);
        assert_eq!(
            serde_json::to_string(&a.records[0]).unwrap(),
            serde_json::to_string(&b.records[0]).unwrap()
        );
    }

    #[test]
    fn excess_violations_fail_the_report() {
        let cov = Coverage {
            records: Vec::new(),
            tally: CoverageTally {
                checked: [100; 5],
                violated: [0, 0, 30, 0, 0],
            },
            per_term_eps: 0.01,
            first_seed: 0,
            pulses: 1,
        };
        assert!(!cov.passed());
        let report = cov.report();
        assert!(report.lines().any(|l| l.starts_with("s_Z1") && l.ends_with("FAIL")));
        assert!(report.ends_with("result: FAIL\n"));
    }
}
