use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported split library size {0} (expected 3, 4 or 5)")]
    UnsupportedLibrarySize(usize),

    #[error("split library optimizer did not converge after {iterations} iterations (spread {spread:e})")]
    LibraryNonConvergence { iterations: usize, spread: f64 },

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eig:e}, largest {max_eig:e}")]
    Indefinite { min_eig: f64, max_eig: f64 },

    #[error("matrix is not symmetric: max asymmetry {0:e}")]
    Asymmetric(f64),

    #[error("invalid split dimensions: {0}")]
    InvalidSplitDims(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("position magnitude {radius:e} DU is inside the singularity guard")]
    Singularity { radius: f64 },

    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),

    #[error("component {index}: {source}")]
    Component { index: usize, source: Box<Error> },

    #[error("node {node}: {source}")]
    Node { node: usize, source: Box<Error> },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.to_string(), reason: reason.into() }
    }

    pub(crate) fn at_node(node: usize, source: Error) -> Self {
        Error::Node { node, source: Box::new(source) }
    }

    pub(crate) fn at_component(index: usize, source: Error) -> Self {
        Error::Component { index, source: Box::new(source) }
    }

    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singularity { .. }
            | Error::StepUnderflow { .. }
            | Error::TooManySteps(_)
            | Error::Indefinite { .. }
            | Error::LibraryNonConvergence { .. } => true,
            Error::Component { source, .. } | Error::Node { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
