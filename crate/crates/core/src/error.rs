use alloc::string::String;

use crate::classify::ReasonCode;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("fixed-point set is empty (residual {residual:.3e})")]
    Degenerate { residual: f64 },

    #[error("system is not in class {class}: {reason}")]
    NotInClass { class: char, reason: ReasonCode },

    #[error("no symmetric positive definite dual scaling reproduces the coupling (residual {residual:.3e})")]
    InconsistentScaling { residual: f64 },

    #[error("coefficient `{0}` must be supplied when mu = 0")]
    MissingCoefficient(&'static str),

    #[error("objective is degenerate: {0}")]
    DegenerateObjective(&'static str),

    #[error("Hessian is not positive definite on the nullspace of B (min projected eigenvalue {min_eig:.3e})")]
    NotConvexifiable { min_eig: f64 },

    #[error("step size {name} = {value} outside ({lo}, {hi}]")]
    StepSizeOutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("certificate not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("constraint matrix is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },

    #[error("Hessian is singular")]
    SingularHessian,

    #[error("matrices are not ordered: min eigenvalue of A2 - A1 is {min_eig:.3e}")]
    NotOrdered { min_eig: f64 },

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("communication graph is disconnected")]
    DisconnectedGraph,
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
