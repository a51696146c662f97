use thiserror::Error;

/// Errors raised by the index computations.
///
/// Numerical rejections carry the quantity that caused them so callers can
/// decide whether to retry with different tolerances.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: asymmetry norm {asymmetry:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { asymmetry: f64, tol: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("subspace is not isotropic: |Z^T B Z| = {norm:.3e}")]
    NotIsotropic { norm: f64 },

    #[error("bilinear form is degenerate: kernel dimension {kernel_dim}")]
    Degenerate { kernel_dim: usize },

    #[error("subspaces are not transverse: intersection dimension {intersection_dim}")]
    NotTransverse { intersection_dim: usize },

    #[error("matrix is not symplectic: residual {residual:.3e}")]
    NotSymplectic { residual: f64 },

    #[error("subspace is not Lagrangian: residual {residual:.3e}, rank {rank}")]
    NotLagrangian { residual: f64, rank: usize },

    #[error("no transverse chart found on [{start}, {end}] after refinement")]
    NoChart { start: f64, end: f64 },

    #[error("path is not closed: endpoint distance {distance:.3e}")]
    NotClosed { distance: f64 },

    #[error("path sampling is too coarse between t = {start} and t = {end}")]
    Sampling { start: f64, end: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid manifold spec: {0}")]
    Spec(String),

    #[error("metric is singular at x = {point:?}")]
    SingularMetric { point: Vec<f64> },

    #[error("integration failed at t = {t}: {reason}")]
    Integration {
        t: f64,
        reason: String,
        last_state: Vec<f64>,
    },

    #[error("closed-orbit refinement did not converge; residual history {history:?}")]
    NoConvergence { history: Vec<f64> },

    #[error("killing field is not timelike at {point:?}: g(Y,Y) = {value:.3e}")]
    NotTimelike { point: Vec<f64>, value: f64 },

    #[error("matrix logarithm unavailable: {0}")]
    Logarithm(String),

    #[error("orbit is not orientation preserving; analyze the doubled iterate")]
    OrientationReversing,

    #[error("ambiguous rational angle {angle}: candidates {first} and {second}")]
    AmbiguousAngle {
        angle: f64,
        first: String,
        second: String,
    },

    #[error("independent computations disagree: {0}")]
    Inconsistent(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
