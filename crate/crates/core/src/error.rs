use thiserror::Error;

use crate::conic::Defect;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("zero distance between {0}")]
    ZeroDistance(String),

    #[error("degenerate expansion point: {0}")]
    DegenerateExpansion(String),

    #[error("every user is already blocked")]
    AllBlocked,

    #[error("resilience weights must be non-negative and sum to one, got {0:?}")]
    Weights([f64; 3]),

    #[error("empty rate trajectory")]
    EmptyTrajectory,

    #[error("invalid timeline: {0}")]
    Timeline(String),

    #[error("invalid conic program: {}", format_defects(.0))]
    InvalidProgram(Vec<Defect>),

    #[error("program text, line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("manifest verification failed: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

fn format_defects(defects: &[Defect]) -> String {
    defects
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
