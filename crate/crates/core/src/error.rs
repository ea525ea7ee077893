use thiserror::Error;

/// Errors raised while validating or loading a network configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(#[from] serde_json::Error),
}

impl ConfigError {
    pub(crate) fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// Errors from evaluating the system model for a given decision.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },
    #[error("support violation at user {user}, AP {ap}: {reason}")]
    Support {
        user: usize,
        ap: usize,
        reason: String,
    },
    #[error("capacity violation at AP {ap}: {reason}")]
    Capacity { ap: usize, reason: String },
}

/// Errors from the continuous subproblem solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubproblemError {
    #[error("assignment infeasible at AP {ap}: {reason}")]
    InfeasibleAssignment { ap: usize, reason: String },
    #[error("assignment violates structural constraints: {0}")]
    InvalidAssignment(String),
    #[error("KKT residual {residual:e} exceeds tolerance {tolerance:e}")]
    Tolerance { residual: f64, tolerance: f64 },
}

/// Errors from master-problem compilation and QUBO I/O.
#[derive(Debug, Error)]
pub enum MasterError {
    #[error("master model holds no cuts")]
    NoCuts,
    #[error("non-finite coefficient in cut {cut}")]
    NonFinite { cut: usize },
    #[error("penalty weight for {family} must be positive, got {value}")]
    BadPenalty { family: &'static str, value: f64 },
    #[error("coefficient magnitude {magnitude:e} exceeds dynamic-range cap {cap:e}")]
    PenaltyOverflow { magnitude: f64, cap: f64 },
    #[error("bit vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("malformed QUBO file at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("sampler backend failed: {0}")]
    Sampler(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Errors from the GBD / HQCGBD orchestrators and the oracle.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("slot is infeasible: users {0:?} have no available AP")]
    InfeasibleSlot(Vec<usize>),
    #[error("no feasible sample after {escalations} penalty escalations")]
    NoFeasibleSample { escalations: usize },
    #[error("feasible assignment count {count} exceeds cap {cap}")]
    SizeCap { count: u128, cap: u128 },
    #[error("no feasible assignment passes the subproblem screen")]
    NoFeasibleAssignment,
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
