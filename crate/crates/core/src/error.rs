use thiserror::Error;

use crate::qp::QpStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix {matrix} is not positive definite (smallest eigenvalue {lambda_min:e})")]
    NotPositiveDefinite {
        matrix: &'static str,
        lambda_min: f64,
    },

    #[error("matrix {matrix} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric {
        matrix: &'static str,
        asymmetry: f64,
    },

    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{map} map: inner QP solve ended with status {status:?}")]
    InnerSolveFailed { map: &'static str, status: QpStatus },

    #[error("iteration limit reached after {iterations} iterations")]
    IterLimit { iterations: usize },

    #[error("instance generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
