use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid perturbation model: {0}")]
    InvalidModel(String),

    #[error("graph generation failed: no connected sample after {retries} attempts")]
    GenerationFailed { retries: usize },

    #[error("degenerate spectrum: minimum eigenvalue gap {gap:e} below tolerance {tolerance:e}")]
    DegenerateSpectrum { gap: f64, tolerance: f64 },

    #[error("enumeration over {count} uncertain edges exceeds cap {cap}")]
    CapExceeded { count: usize, cap: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("linear system is singular even after ridge escalation")]
    SingularSystem,

    #[error("nominal filter is identically zero")]
    InvalidNominal,

    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
