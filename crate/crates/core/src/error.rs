use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: need finite corners with x2 > x1 and y2 > y1")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("force undefined: boxes do not overlap")]
    NoOverlap,

    #[error("invalid annotation for pedestrian {index}: visible box not inside full box")]
    InvalidAnnotation { index: usize },

    #[error("grid shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("descent diverged at step {step}: loss {loss} exceeds 10x initial {initial}")]
    Diverged { step: usize, loss: f64, initial: f64 },

    #[error("numerical failure at step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
