use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate dual quaternion blend (real part norm {norm:e}){}", vertex.map(|v| format!(" at vertex {v}")).unwrap_or_default())]
    DegenerateBlend { norm: f64, vertex: Option<usize> },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::DegenerateBlend { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
