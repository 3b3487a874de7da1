use thiserror::Error;

/// Errors produced by the correction pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NucError {
    #[error("invalid dimensions: {0}")]
    Dimensions(String),

    #[error("non-finite value at valid pixel ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("empty overlap: {0}")]
    EmptyOverlap(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("registration failed: {0}")]
    RegistrationFailure(String),

    #[error("ill-conditioned registration (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("insufficient overlap: {found} interior pixels, need at least {required}")]
    InsufficientOverlap { found: usize, required: usize },

    #[error("degenerate point ({s}, {t}): projective denominator {denominator:.3e}")]
    DegeneratePoint { s: f64, t: f64, denominator: f64 },

    #[error("normalization failed: mean gain {0} is not positive")]
    Normalization(f64),

    #[error("solver diverged during {stage} (cycle {cycle}): objective {objective}")]
    Divergence {
        stage: String,
        cycle: usize,
        objective: f64,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NucError>;
