use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("model `{model}` requires parameter `{param}`")]
    MissingParameter { model: String, param: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("scheme `{0}` requires commutative noise")]
    UnsupportedScheme(String),
    #[error("integration produced a non-finite state")]
    NonFinite,
    #[error("implicit solve did not converge (residual {residual:e})")]
    ImplicitSolve { residual: f64 },
    #[error("projection matrix is singular")]
    ProjectionSingular,
    #[error("projection did not converge (residual {residual:e})")]
    ProjectionNotConverged { residual: f64 },
    #[error("interval {n}{}: {source}", .step.map(|j| format!(", step {j}")).unwrap_or_default())]
    Located {
        n: usize,
        step: Option<usize>,
        #[source]
        source: Box<Error>,
    },
    #[error("sample path {path}: {source}")]
    Path {
        path: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{} failure(s), first: {}", .0.len(), .0[0])]
    Many(Vec<Error>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn at(self, n: usize, step: Option<usize>) -> Self {
        Error::Located {
            n,
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn on_path(self, path: usize) -> Self {
        Error::Path {
            path,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite
            | Error::ImplicitSolve { .. }
            | Error::ProjectionSingular
            | Error::ProjectionNotConverged { .. } => true,
            Error::Located { source, .. } | Error::Path { source, .. } => source.is_numerical(),
            Error::Many(errs) => errs.iter().any(Error::is_numerical),
            _ => false,
        }
    }

    pub(crate) fn collect(mut errs: Vec<Error>) -> Self {
        if errs.len() == 1 {
            errs.pop().unwrap()
        } else {
            Error::Many(errs)
        }
    }
}
