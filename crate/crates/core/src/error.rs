use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("path leaves the spatial grid at t = {time} (step {step})")]
    PathExitsGrid { step: usize, time: f64 },

    #[error("local Hölder bound violated on window [{start}, {end}]: seminorm {seminorm} > {bound}")]
    LocalBoundViolated {
        start: f64,
        end: f64,
        seminorm: f64,
        bound: f64,
    },

    #[error("circulant embedding has negative eigenvalue {value} at index {index}")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("blow-up guard tripped at t = {time} (step {step}): |Y| = {magnitude} > {limit}")]
    BlowUp {
        step: usize,
        time: f64,
        magnitude: f64,
        limit: f64,
        particle: Option<usize>,
    },

    #[error("size cap exceeded: {size} > {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
