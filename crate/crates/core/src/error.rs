use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("{what} did not converge after {iterations} iterations (last iterate {last:?})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        last: Vec<f64>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("duplicate design rows {0} and {1}")]
    DuplicateDesign(usize, usize),

    #[error("kernel matrix is ill-conditioned: {0}")]
    Conditioning(String),

    #[error("quantile function for margin {margin} returned a non-finite value at u = {u}")]
    Mapping { margin: usize, u: f64 },

    #[error("bounds violation: {0}")]
    Bounds(String),

    #[error("conditional sampling failed at design location {index}: {source}")]
    AtLocation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("emulator for surface `{surface}` failed: {source}")]
    Surface {
        surface: String,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_location(index: usize, source: Error) -> Self {
        Error::AtLocation {
            index,
            source: Box::new(source),
        }
    }

    pub(crate) fn surface(surface: impl Into<String>, source: Error) -> Self {
        Error::Surface {
            surface: surface.into(),
            source: Box::new(source),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
