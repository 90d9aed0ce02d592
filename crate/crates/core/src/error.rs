use thiserror::Error;

/// Errors raised by the localization library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A point coincides with a receiver, so the polar Jacobian is singular.
    #[error("degenerate range {range:e}: point coincides with the receiver")]
    DegenerateRange { range: f64 },

    #[error("bearing {bearing} rad lies outside the feasible cone [-pi/2, pi/2]")]
    InfeasibleBearing { bearing: f64 },

    /// The two bootstrap bearings are (anti)parallel within the configured separation.
    #[error("bootstrap bearings are near-collinear (|sin dtheta| = {sin_diff:.3e})")]
    DegenerateBootstrap { sin_diff: f64 },

    #[error("measurements {first} and {second} come from the same receiver")]
    SameReceiver { first: usize, second: usize },

    #[error("no measurement pair is separated enough to bootstrap")]
    NoViablePair,

    #[error("covariance sum is singular (det = {det:e})")]
    SingularCovariance { det: f64 },

    #[error("singular Fisher information (det = {det:e}); need two distinct bearings")]
    SingularInformation { det: f64 },

    #[error("outlier fraction {0} outside (0, 1)")]
    InvalidAlpha(f64),

    #[error("all {runs} suppression runs were pruned or degenerate")]
    AllRunsPruned { runs: usize },

    #[error("need at least {needed} measurements, got {got}")]
    InsufficientMeasurements { needed: usize, got: usize },

    #[error("unknown receiver id {0}")]
    UnknownReceiver(usize),

    #[error("source at distance {distance} lies outside the field of radius {radius}")]
    SourceOutsideField { distance: f64, radius: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
