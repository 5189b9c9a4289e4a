//! Finite-key security bounds for two-decoy-state BB84.
//!
//! The crate is split along the data flow of a key-rate evaluation:
//!
//! * [`channel`] maps a [`ProtocolPoint`] to the expected per-intensity
//!   statistics of a dedicated-fiber link.
//! * [`decoy`] turns per-intensity statistics into lower bounds on vacuum and
//!   single-photon events and an upper bound on single-photon errors.
//! * [`secrecy`] bounds the phase error rate, accounts for error-correction
//!   leakage and computes the extractable key length, including the
//!   `eps_sec = kappa * ell` fixed point.
//! * [`optimizer`] maximizes the key rate over the free protocol parameters.
//! * [`sim`] is a pulse-level Monte Carlo of the protocol that records
//!   photon-number-resolved ground truth, used to check every bound
//!   statistically.
//!
//! Everything here is `no_std` + `alloc`; file formats, the CLI and parallel
//! drivers live in the `decoy-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// Guards are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod channel;
pub mod counts;
pub mod decoy;
mod error;
pub mod intensity;
pub(crate) mod math;
pub mod optimizer;
pub mod secrecy;
pub mod sim;

pub use channel::{ChannelParams, ExpectedStatistics, MisalignmentModel, ProtocolPoint};
pub use counts::{Basis, ObservedCounts};
pub use decoy::{BoundEstimates, Confidence};
pub use error::Error;
pub use intensity::IntensitySettings;
pub use optimizer::{evaluate_rate, optimize, FixedSet, FreeParams, OptResult, OptimizerOptions, SearchSpace};
pub use secrecy::{key_rate, KeyRateResult, Regime, SecrecyBudget, SecurityParams};
pub use sim::{simulate_run, verify_bounds, CoverageTally, GroundTruth, SimConfig, SimOutcome, ViolationReport};

pub type Result<T, E = Error> = core::result::Result<T, E>;
