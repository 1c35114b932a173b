use std::path::PathBuf;

use retrofit_core::classify::ReasonCode;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: retrofit_core::Error,
    },

    #[error("classification rejected the system as class {class}: {reasons:?}")]
    Rejected { class: char, reasons: Vec<ReasonCode> },

    #[error("certificate checks failed: {}", .0.join(", "))]
    Certificate(Vec<String>),

    #[error("variant `{variant}` diverged at step {step}")]
    Diverged { variant: String, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("plot: {0}")]
    Plot(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Stage { source, .. } => match source {
                retrofit_core::Error::Config { .. }
                | retrofit_core::Error::DisconnectedGraph
                | retrofit_core::Error::Dimension(_)
                | retrofit_core::Error::NonFinite(_)
                | retrofit_core::Error::MissingCoefficient(_)
                | retrofit_core::Error::InvalidCoefficient(_) => 2,
                retrofit_core::Error::NotInClass { .. } | retrofit_core::Error::InconsistentScaling { .. } => 3,
                _ => 1,
            },
            AppError::Rejected { .. } => 3,
            AppError::Certificate(_) => 4,
            AppError::Diverged { .. } => 5,
            AppError::Json(e) if e.is_data() || e.is_syntax() || e.is_eof() => 2,
            _ => 1,
        }
    }

    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(retrofit_core::Error) -> AppError {
        move |source| AppError::Stage { stage, source }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Io { path, source }
    }
}
