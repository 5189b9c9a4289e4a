//! Plain-text `key = value` run configuration.
//!
//! One entry per line; `#` starts a comment. Unknown keys and out-of-range
//! values are rejected with the line and column of the offending token.
//! Command-line `--set key=value` overrides are applied after the file.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::path::PathBuf;

use decoy_core::optimizer::DEFAULT_MU3;
use decoy_core::{
    ChannelParams, Error as CoreError, FixedSet, FreeParams, MisalignmentModel, ProtocolPoint, SearchSpace,
    SecrecyBudget, SecurityParams,
};

/// Where a configuration value came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Origin {
    Default,
    File {
        path: String,
        line: usize,
        column: usize,
    },
    /// Zero-based position among the `--set` overrides.
    Override(usize),
}

impl Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => f.write_str("<default>"),
            Origin::File { path, line, column } => write!(f, "{path}:{line}:{column}"),
            Origin::Override(i) => write!(f, "--set #{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{origin}: {message}")]
pub struct ConfigError {
    pub origin: Origin,
    pub message: String,
}

/// Documented keys, in dump order.
pub const KEYS: &[(&str, &str)] = &[
    ("length_km", "fiber length L in km, >= 0"),
    ("attenuation", "fiber loss alpha in dB/km, >= 0"),
    ("eta_bob", "detector efficiency in [0, 1]"),
    ("p_dc", "dark-count probability in [0, 0.5]"),
    ("p_ap", "afterpulse probability in [0, 1]"),
    ("e_mis", "misalignment error in [0, 1]"),
    (
        "misalignment",
        "transmittance in the misalignment term: system | channel",
    ),
    ("kappa", "secrecy per key bit, eps_sec = kappa * ell; in (0, 1)"),
    ("eps_sec", "fixed secrecy parameter in (0, 1); replaces kappa"),
    ("eps_cor", "correctness parameter in (0, 1)"),
    ("f_ec", "error-correction efficiency, >= 1"),
    ("phi_tol", "phase-error abort threshold in (0, 0.5]"),
    ("n_x", "post-processing block size n_X, >= 1"),
    ("q_x", "X-basis probability in (0, 1)"),
    ("p_mu1", "probability of mu1 in (0, 1)"),
    ("p_mu2", "probability of mu2 in (0, 1)"),
    ("mu1", "signal intensity, > mu2 + mu3"),
    ("mu2", "decoy intensity, > mu3"),
    ("mu3", "second decoy intensity, >= 0"),
    ("range_q_x", "optimizer bounds lo,hi for q_x"),
    ("range_p_mu1", "optimizer bounds lo,hi for p_mu1"),
    ("range_p_mu2", "optimizer bounds lo,hi for p_mu2"),
    ("range_mu1", "optimizer bounds lo,hi for mu1"),
    ("range_mu2", "optimizer bounds lo,hi for mu2"),
    ("budget", "optimizer evaluation cap, >= 1"),
    ("starts", "optimizer Latin-hypercube starts"),
    ("seed", "seed for the optimizer and the first simulation run"),
    ("asymptotic", "evaluate in the infinite-key limit: true | false"),
    ("lengths", "sweep distances: a,b,c or start:stop:step"),
    ("block_sizes", "sweep block sizes n_X: a,b,c"),
    ("asymptotic_curve", "append an asymptotic row per sweep distance"),
    ("runs", "number of simulation runs, >= 1"),
    ("pulses", "pulses per simulation run, >= 1"),
    ("coverage_eps_sec", "eps_sec whose per-term share sets coverage budgets"),
    (
        "n_max",
        "photon-number truncation; default picks the smallest safe value",
    ),
    (
        "z_misalignment",
        "Z-basis misalignment in [0, 1], when it differs from e_mis",
    ),
    ("workers", "worker threads, 0 = all cores"),
    ("out", "output path"),
];

const INTENSITY_KEYS: &[&str] = &["mu1", "mu2", "mu3", "p_mu1", "p_mu2"];
const CHANNEL_KEYS: &[&str] = &["length_km", "attenuation", "eta_bob", "p_dc", "p_ap", "e_mis"];
const SECURITY_KEYS: &[&str] = &["kappa", "eps_sec", "eps_cor", "f_ec", "phi_tol"];
const SPACE_KEYS: &[&str] = &[
    "range_q_x",
    "range_p_mu1",
    "range_p_mu2",
    "range_mu1",
    "range_mu2",
    "mu3",
];
const SIM_KEYS: &[&str] = &["pulses", "n_max", "z_misalignment", "mu1"];

/// Effective configuration of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub channel: ChannelParams,
    pub security: SecurityParams,
    pub n_x: f64,
    pub point: FreeParams,
    pub mu3: f64,
    pub space: SearchSpace,
    pub budget: usize,
    pub starts: usize,
    pub seed: u64,
    pub asymptotic: bool,
    pub lengths: Vec<f64>,
    pub block_sizes: Vec<f64>,
    pub asymptotic_curve: bool,
    pub runs: u64,
    pub pulses: u64,
    pub coverage_eps_sec: f64,
    pub n_max: Option<u32>,
    pub z_misalignment: Option<f64>,
    pub workers: usize,
    pub out: Option<PathBuf>,
    origins: BTreeMap<&'static str, Origin>,
}

impl Default for RunConfig {
    /// The reference fixed set at 50 km with a large-block operating point.
    fn default() -> Self {
        Self {
            channel: ChannelParams::reference(50.0),
            security: SecurityParams::reference(),
            n_x: 1e7,
            point: FreeParams {
                q_x: 0.9,
                p_mu1: 0.7,
                p_mu2: 0.2,
                mu1: 0.45,
                mu2: 0.17,
            },
            mu3: DEFAULT_MU3,
            space: SearchSpace::default(),
            budget: 5000,
            starts: 8,
            seed: 0,
            asymptotic: false,
            lengths: (0..=30).map(|i| f64::from(i) * 5.0).collect(),
            block_sizes: vec![1e4, 1e5, 1e6, 1e7, 1e8, 1e9],
            asymptotic_curve: false,
            runs: 1000,
            pulses: 1_000_000,
            coverage_eps_sec: 0.21,
            n_max: None,
            z_misalignment: None,
            workers: 0,
            out: None,
            origins: BTreeMap::new(),
        }
    }
}

fn parse_f64(v: &str) -> Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not finite"))
    }
}

fn in_range(v: &str, ok: impl Fn(f64) -> bool, rule: &str) -> Result<f64, String> {
    let x = parse_f64(v)?;
    if ok(x) {
        Ok(x)
    } else {
        Err(format!("{x} violates {rule}"))
    }
}

fn parse_int<T>(v: &str, min: T, rule: &str) -> Result<T, String>
where
    T: std::str::FromStr + PartialOrd + Display,
{
    // Accept `1e6`-style integers as well.
    let x = match v.parse::<T>() {
        Ok(x) => x,
        Err(_) => {
            let f = parse_f64(v)?;
            if f.fract() != 0.0 || !(0.0..=1.8e19).contains(&f) {
                return Err(format!("`{v}` is not a non-negative integer"));
            }
            format!("{f:.0}")
                .parse::<T>()
                .map_err(|_| format!("`{v}` is out of range"))?
        }
    };
    if x < min {
        return Err(format!("{x} violates {rule}"));
    }
    Ok(x)
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{v}` is not `true` or `false`")),
    }
}

fn parse_list(v: &str, ok: impl Fn(f64) -> bool, rule: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    let xs = if parts.len() == 3 {
        let start = parse_f64(parts[0])?;
        let stop = parse_f64(parts[1])?;
        let step = in_range(parts[2], |s| s > 0.0, "step > 0")?;
        if stop < start {
            return Err("range stop lies below start".into());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        if n > 100_000 {
            return Err("range has more than 100000 points".into());
        }
        (0..=n).map(|i| start + i as f64 * step).collect()
    } else {
        v.split(',')
            .map(|s| parse_f64(s.trim()))
            .collect::<Result<Vec<_>, _>>()?
    };
    if xs.is_empty() {
        return Err("list is empty".into());
    }
    match xs.iter().find(|&&x| !ok(x)) {
        Some(x) => Err(format!("element {x} violates {rule}")),
        None => Ok(xs),
    }
}

fn parse_interval(v: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = v
        .split_once(',')
        .ok_or_else(|| format!("`{v}` is not an interval `lo,hi`"))?;
    let lo = parse_f64(lo.trim())?;
    let hi = parse_f64(hi.trim())?;
    if lo > hi {
        return Err(format!("interval ({lo}, {hi}) is reversed"));
    }
    Ok((lo, hi))
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn prob_open(v: &str) -> Result<f64, String> {
    in_range(v, |x| x > 0.0 && x < 1.0, "0 < value < 1")
}

fn prob_closed(v: &str) -> Result<f64, String> {
    in_range(v, |x| (0.0..=1.0).contains(&x), "0 <= value <= 1")
}

impl RunConfig {
    /// Parses `text` on top of the defaults; `path` labels diagnostics.
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies every entry of a configuration file without cross-checking.
    pub fn apply_text(&mut self, text: &str, path: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            if line.trim().is_empty() {
                continue;
            }
            let at = |column: usize| Origin::File {
                path: path.to_string(),
                line: i + 1,
                column,
            };
            let key_col = line.len() - line.trim_start().len() + 1;
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError {
                    origin: at(key_col),
                    message: "expected `key = value`".into(),
                });
            };
            let value_col = key.len() + 2 + (value.len() - value.trim_start().len());
            self.assign(key.trim(), value.trim(), at(key_col), at(value_col))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override from the command line.
    pub fn apply_override(&mut self, index: usize, entry: &str) -> Result<(), ConfigError> {
        let origin = Origin::Override(index);
        let Some((key, value)) = entry.split_once('=') else {
            return Err(ConfigError {
                origin,
                message: format!("expected `key=value`, got `{entry}`"),
            });
        };
        self.assign(key.trim(), value.trim(), origin.clone(), origin)
    }

    fn assign(&mut self, key: &str, value: &str, key_at: Origin, value_at: Origin) -> Result<(), ConfigError> {
        let Some(&(name, _)) = KEYS.iter().find(|(k, _)| *k == key) else {
            return Err(ConfigError {
                origin: key_at,
                message: format!("unknown key `{key}`"),
            });
        };
        let conflict = match name {
            "kappa" => Some("eps_sec"),
            "eps_sec" => Some("kappa"),
            _ => None,
        };
        if let Some(other) = conflict.and_then(|c| self.origins.get(c).map(|o| (c, o))) {
            return Err(ConfigError {
                origin: key_at,
                message: format!("`{name}` conflicts with `{}` set at {}", other.0, other.1),
            });
        }
        self.set(name, value).map_err(|reason| ConfigError {
            origin: value_at.clone(),
            message: format!("invalid value for `{name}`: {reason}"),
        })?;
        self.origins.insert(name, value_at);
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let nonneg = |v| in_range(v, |x| x >= 0.0, "value >= 0");
        match key {
            "length_km" => self.channel.length_km = nonneg(v)?,
            "attenuation" => self.channel.attenuation = nonneg(v)?,
            "eta_bob" => self.channel.eta_bob = prob_closed(v)?,
            "p_dc" => self.channel.p_dc = in_range(v, |x| (0.0..=0.5).contains(&x), "0 <= p_dc <= 0.5")?,
            "p_ap" => self.channel.p_ap = prob_closed(v)?,
            "e_mis" => self.channel.e_mis = prob_closed(v)?,
            "misalignment" => {
                self.channel.misalignment = match v {
                    "system" => MisalignmentModel::SystemTransmittance,
                    "channel" => MisalignmentModel::ChannelTransmittance,
                    _ => return Err(format!("`{v}` is not `system` or `channel`")),
                }
            }
            "kappa" => self.security.budget = SecrecyBudget::PerBit { kappa: prob_open(v)? },
            "eps_sec" => self.security.budget = SecrecyBudget::Fixed { eps_sec: prob_open(v)? },
            "eps_cor" => self.security.eps_cor = prob_open(v)?,
            "f_ec" => self.security.f_ec = in_range(v, |x| x >= 1.0, "f_ec >= 1")?,
            "phi_tol" => self.security.phi_tol = in_range(v, |x| x > 0.0 && x <= 0.5, "0 < phi_tol <= 0.5")?,
            "n_x" => self.n_x = in_range(v, |x| x >= 1.0, "n_x >= 1")?,
            "q_x" => self.point.q_x = prob_open(v)?,
            "p_mu1" => self.point.p_mu1 = prob_open(v)?,
            "p_mu2" => self.point.p_mu2 = prob_open(v)?,
            "mu1" => self.point.mu1 = in_range(v, |x| x > 0.0, "mu1 > 0")?,
            "mu2" => self.point.mu2 = in_range(v, |x| x > 0.0, "mu2 > 0")?,
            "mu3" => {
                self.mu3 = nonneg(v)?;
                self.space.mu3 = self.mu3;
            }
            "range_q_x" => self.space.q_x = parse_interval(v)?,
            "range_p_mu1" => self.space.p_mu1 = parse_interval(v)?,
            "range_p_mu2" => self.space.p_mu2 = parse_interval(v)?,
            "range_mu1" => self.space.mu1 = parse_interval(v)?,
            "range_mu2" => self.space.mu2 = parse_interval(v)?,
            "budget" => self.budget = parse_int(v, 1, "budget >= 1")?,
            "starts" => self.starts = parse_int(v, 0, "starts >= 0")?,
            "seed" => self.seed = parse_int(v, 0, "seed >= 0")?,
            "asymptotic" => self.asymptotic = parse_bool(v)?,
            "lengths" => self.lengths = parse_list(v, |x| x >= 0.0, "length >= 0")?,
            "block_sizes" => self.block_sizes = parse_list(v, |x| x >= 1.0, "block size >= 1")?,
            "asymptotic_curve" => self.asymptotic_curve = parse_bool(v)?,
            "runs" => self.runs = parse_int(v, 1, "runs >= 1")?,
            "pulses" => self.pulses = parse_int(v, 1, "pulses >= 1")?,
            "coverage_eps_sec" => self.coverage_eps_sec = prob_open(v)?,
            "n_max" => self.n_max = Some(parse_int(v, decoy_core::sim::MIN_N_MAX, "n_max >= 10")?),
            "z_misalignment" => self.z_misalignment = Some(prob_closed(v)?),
            "workers" => self.workers = parse_int(v, 0, "workers >= 0")?,
            "out" => {
                if v.is_empty() {
                    return Err("path is empty".into());
                }
                self.out = Some(PathBuf::from(v));
            }
            _ => unreachable!("key table and setter disagree on `{key}`"),
        }
        Ok(())
    }

    /// Origin of the latest explicitly set key in `group`.
    fn blame(&self, group: &[&str]) -> Origin {
        group
            .iter()
            .filter_map(|k| self.origins.get(k))
            .max()
            .cloned()
            .unwrap_or(Origin::Default)
    }

    fn check(&self, group: &[&str], r: Result<(), CoreError>) -> Result<(), ConfigError> {
        r.map_err(|e| ConfigError {
            origin: self.blame(group),
            message: e.to_string(),
        })
    }

    /// Cross-key constraints that no single value can violate on its own.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check(INTENSITY_KEYS, self.point.intensities(self.mu3).map(drop))?;
        self.check(CHANNEL_KEYS, self.channel.validate())?;
        self.check(SECURITY_KEYS, self.security.validate())?;
        self.check(SPACE_KEYS, self.space.validate())?;
        if let Some(n_max) = self.n_max {
            let safe = decoy_core::sim::required_n_max(self.point.mu1);
            if n_max < safe {
                return Err(ConfigError {
                    origin: self.blame(SIM_KEYS),
                    message: format!("n_max = {n_max} leaves a Poisson tail >= 1e-12 at mu1; need >= {safe}"),
                });
            }
        }
        Ok(())
    }

    /// Fixed parameters at the configured distance and block size.
    pub fn fixed(&self) -> FixedSet {
        self.fixed_at(self.channel.length_km, self.n_x)
    }

    pub fn fixed_at(&self, length_km: f64, n_x: f64) -> FixedSet {
        FixedSet {
            channel: ChannelParams {
                length_km,
                ..self.channel
            },
            security: self.security,
            n_x,
        }
    }

    /// The configured operating point.
    pub fn protocol_point(&self) -> Result<ProtocolPoint, CoreError> {
        self.point.point(self.mu3, &self.fixed())
    }

    /// Serializes the effective configuration; parsing the output yields an
    /// equal configuration.
    pub fn dump(&self) -> String {
        let mut s = String::from("# effective configuration\n");
        for &(key, help) in KEYS {
            let value = match key {
                "length_km" => Some(self.channel.length_km.to_string()),
                "attenuation" => Some(self.channel.attenuation.to_string()),
                "eta_bob" => Some(self.channel.eta_bob.to_string()),
                "p_dc" => Some(self.channel.p_dc.to_string()),
                "p_ap" => Some(self.channel.p_ap.to_string()),
                "e_mis" => Some(self.channel.e_mis.to_string()),
                "misalignment" => Some(
                    match self.channel.misalignment {
                        MisalignmentModel::SystemTransmittance => "system",
                        MisalignmentModel::ChannelTransmittance => "channel",
                    }
                    .to_string(),
                ),
                "kappa" => match self.security.budget {
                    SecrecyBudget::PerBit { kappa } => Some(kappa.to_string()),
                    SecrecyBudget::Fixed { .. } => None,
                },
                "eps_sec" => match self.security.budget {
                    SecrecyBudget::Fixed { eps_sec } => Some(eps_sec.to_string()),
                    SecrecyBudget::PerBit { .. } => None,
                },
                "eps_cor" => Some(self.security.eps_cor.to_string()),
                "f_ec" => Some(self.security.f_ec.to_string()),
                "phi_tol" => Some(self.security.phi_tol.to_string()),
                "n_x" => Some(self.n_x.to_string()),
                "q_x" => Some(self.point.q_x.to_string()),
                "p_mu1" => Some(self.point.p_mu1.to_string()),
                "p_mu2" => Some(self.point.p_mu2.to_string()),
                "mu1" => Some(self.point.mu1.to_string()),
                "mu2" => Some(self.point.mu2.to_string()),
                "mu3" => Some(self.mu3.to_string()),
                "range_q_x" => Some(interval(self.space.q_x)),
                "range_p_mu1" => Some(interval(self.space.p_mu1)),
                "range_p_mu2" => Some(interval(self.space.p_mu2)),
                "range_mu1" => Some(interval(self.space.mu1)),
                "range_mu2" => Some(interval(self.space.mu2)),
                "budget" => Some(self.budget.to_string()),
                "starts" => Some(self.starts.to_string()),
                "seed" => Some(self.seed.to_string()),
                "asymptotic" => Some(self.asymptotic.to_string()),
                "lengths" => Some(join(&self.lengths)),
                "block_sizes" => Some(join(&self.block_sizes)),
                "asymptotic_curve" => Some(self.asymptotic_curve.to_string()),
                "runs" => Some(self.runs.to_string()),
                "pulses" => Some(self.pulses.to_string()),
                "coverage_eps_sec" => Some(self.coverage_eps_sec.to_string()),
                "n_max" => self.n_max.map(|n| n.to_string()),
                "z_misalignment" => self.z_misalignment.map(|e| e.to_string()),
                "workers" => Some(self.workers.to_string()),
                "out" => self.out.as_ref().map(|p| p.display().to_string()),
                _ => unreachable!("key table and dump disagree on `{key}`"),
            };
            if let Some(v) = value {
                s.push_str(&format!("# {help}\n{key} = {v}\n"));
            }
        }
        s
    }
}

fn interval((lo, hi): (f64, f64)) -> String {
    format!("{lo},{hi}")
}

impl RunConfig {
    /// Compares configurations by value, ignoring where each value came from.
    pub fn same_values(&self, other: &Self) -> bool {
        let strip = |c: &Self| Self {
            origins: BTreeMap::new(),
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}
