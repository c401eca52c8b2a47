use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("field `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("field `{0}` must be a positive integer")]
    NonPositive(&'static str),
    #[error("invalid solver hints: {0}")]
    InvalidHints(String),
    #[error("unsatisfiable hints: {0}")]
    Unsatisfiable(String),
    #[error("k_c = {0} is incompatible with the critical itinerary (need k_c = 2 mod 3)")]
    ItineraryIncompatible(u32),
    #[error("point outside the domain: {0}")]
    OutOfDomain(String),
    #[error("leading coefficient is zero")]
    Degree,
    #[error("point lies in a gap between stripes")]
    GapPoint,
    #[error("cone undefined on the critical orbit")]
    OnCriticalOrbit,
    #[error("orbit escaped at step {0}")]
    Escaped(usize),
    #[error("segment is not a critical tube: {0}")]
    NotATube(String),
    #[error("word is not a first return: {0}")]
    NotFirstReturn(String),
    #[error("window is not complete")]
    IncompleteWindow,
    #[error("inadmissible transition at position {0}")]
    Inadmissible(usize),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
