use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid intensity settings: {0}")]
    InvalidIntensities(&'static str),
    #[error("invalid channel parameters: {0}")]
    InvalidChannel(&'static str),
    #[error("invalid security parameters: {0}")]
    InvalidSecurity(&'static str),
    #[error("invalid protocol point: {0}")]
    InvalidPoint(&'static str),
    #[error("invalid counts: {0}")]
    InvalidCounts(&'static str),
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: &'static str },
    #[error("no detections possible with these parameters")]
    NoDetections,
    #[error("phase error estimation impossible: no single-photon events")]
    EstimationImpossible,
    #[error("security budget iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(&'static str),
    #[error("phase-error ground truth unavailable: channel is not basis-symmetric")]
    GroundTruthUnavailable,
}
