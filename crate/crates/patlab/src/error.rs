//! Crate-wide error type.
//!
//! Every fallible operation reports through [`Error`] so callers (and the CLI)
//! can distinguish bad inputs from genuine numerical failures.

/// Unified error type for grid construction, medium validation, solvers and
/// the analysis pipelines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("medium validation failed: {0}")]
    InvalidMedium(String),
    #[error("invalid initial data: {0}")]
    InvalidInitialData(String),
    #[error("time step {dt:.6e} exceeds the stability limit {limit:.6e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("field became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("iterative solve stalled: relative residual {residual:.3e} after {iters} iterations")]
    NoConvergence { residual: f64, iters: usize },
    #[error("record carries no interior frames; re-run with frame recording enabled")]
    MissingFrames,
    #[error("decay fit flagged possible trapping; no tail bound is available")]
    TrappingDecay,
    #[error("leading even moment undetectable: all even boundary moments sit below threshold")]
    K0Undetectable,
    #[error("boundary traces disagree: relative gap {gap:.3e} exceeds {tol:.3e}")]
    TraceMismatch { gap: f64, tol: f64 },
    #[error("regions must be pairwise separated and lie inside the recovery ball: {0}")]
    BadRegions(String),
    #[error("complement of the marked regions is not connected")]
    DisconnectedComplement,
    #[error("operation requires an identity principal part ({0})")]
    RequiresIdentityTensor(&'static str),
    #[error("operation requires a diagonal principal part ({0})")]
    RequiresDiagonalTensor(&'static str),
    #[error("ill-conditioned fit: {0}")]
    IllConditionedFit(String),
    #[error("spectral solve failed: {0}")]
    Eigensolve(String),
    #[error("transform divergent: |Im tau| = {im:.3e} is not inside the decay strip (delta = {delta:.3e})")]
    OutsideStrip { im: f64, delta: f64 },
    #[error("Laplace parameter Re(p) = {re:.3e} sits left of the convergence threshold {threshold:.3e}")]
    AbscissaViolation { re: f64, threshold: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed field file: {0}")]
    MalformedField(String),
}

pub type Result<T> = std::result::Result<T, Error>;
