use thiserror::Error;

pub type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EngineError {
    /// A value left the domain where the field is smooth (p = 0, log of a
    /// non-positive number, non-finite arithmetic, ...).
    #[error("evaluation domain error: {0}")]
    Domain(String),

    #[error("ill-conditioned matrix: worst pivot {pivot:e}, condition estimate {condition:e}")]
    Conditioning { pivot: f64, condition: f64 },

    #[error("regularity failure: {0}")]
    Regularity(String),

    #[error("jet order {available} is too low, {needed} required")]
    InsufficientOrder { needed: usize, available: usize },

    #[error("valence mismatch: {0}")]
    Valence(String),

    /// The deformed metric is not positive definite: α + 2τv ≤ 0.
    #[error("deformed metric is not positive definite: alpha + 2 tau v = {value:e}")]
    Positivity { value: f64 },

    #[error("finite-difference step underflow at variable {var}")]
    StepUnderflow { var: usize },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("invalid structure definition: {0}")]
    Definition(String),
}
