use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("head `{0}` has no covariance")]
    UnsupportedHead(&'static str),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("training diverged: non-finite {component}{location}")]
    Divergence { component: String, location: String },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("bad magic in {0}")]
    BadMagic(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u8, expected: u8 },

    #[error("truncated input: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("empty {0}")]
    Empty(String),

    #[error("cannot tile decoded vectors of length {0} into square images")]
    NonSquareImage(usize),

    #[error("{context}: {source}")]
    Tagged {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn tagged(self, context: impl Into<String>) -> Self {
        Error::Tagged {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through context tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Tagged { source, .. } => source.root(),
            other => other,
        }
    }
}
