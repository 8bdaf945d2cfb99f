use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate calibration covariance: {0}")]
    DegenerateCovariance(String),

    #[error("trial diverged after {steps} steps (|state| = {magnitude:.3e}) with params {params}")]
    Diverged {
        steps: usize,
        magnitude: f64,
        params: String,
    },

    #[error("capture window has {got} samples, expected {expected}")]
    ShortWindow { got: usize, expected: usize },

    #[error("trajectory start and end coincide (chord = {0:.3e})")]
    UndefinedTrajectory(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("mapping matrix has rank {rank}, expected 2")]
    RankDeficient { rank: usize },

    #[error("zero mapping matrix")]
    ZeroMapping,
}
