//! Error taxonomy shared by every subsystem.

use thiserror::Error;

/// Errors produced while building models or running operations.
#[derive(Debug, Error)]
pub enum OuError {
    #[error("covariance matrix is not symmetric (max asymmetry {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("drift matrix is not stable: spectral abscissa {abscissa:e} >= -1e-9")]
    DriftNotStable { abscissa: f64 },

    #[error("Lyapunov linear system is singular; drift is too close to instability")]
    LyapunovSingular,

    #[error("matrix exponential overflowed or |t|*||A|| = {scale:e} exceeds 1e4")]
    Overflow { scale: f64 },

    #[error("route {route} is only defined for t > 0 (got t = {t})")]
    NegativeTimeUnsupportedRoute { route: &'static str, t: f64 },

    #[error("time parameter must be positive (got {0})")]
    TimeNonpositive(f64),

    #[error("tensor quadrature supports n <= 4 (got n = {0})")]
    DimensionTooLargeForQuadrature(usize),

    #[error("quadrature did not converge: relative change {change:e} at order {order}")]
    QuadratureNotConverged { order: usize, change: f64 },

    #[error("polar coordinates are undefined at the origin")]
    OriginExcluded,

    #[error("no sign change bracketing the polar time within |s| <= {s_max}")]
    BracketNotFound { s_max: f64 },

    #[error("tube level beta = {beta} is below the configured minimum {beta_min}")]
    BetaTooSmall { beta: f64, beta_min: f64 },

    #[error("expected hit count {expected:.2} < 10 at alpha = {alpha}; increase the sample budget")]
    SampleBudgetTooSmall { alpha: f64, expected: f64 },

    #[error("dirac width did not stabilize: halving changed the result by {change_pct:.1}%")]
    WidthNotConverged { change_pct: f64 },

    #[error("forbidden-zone candidate grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("config error: {0}")]
    ConfigParse(String),

    #[error("model invalid: {0}")]
    ModelInvalid(Box<OuError>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OuError>;

impl OuError {
    /// CLI exit code class: 2 for usage/config problems, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            OuError::ConfigParse(_) | OuError::Io(_) => 2,
            _ => 3,
        }
    }
}
