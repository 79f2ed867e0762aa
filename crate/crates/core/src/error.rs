use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("quadrature did not converge on [{lo}, {hi}]: estimate {estimate:e}, error {error:e} after {intervals} intervals")]
    Quadrature {
        lo: f64,
        hi: f64,
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("state exploded at t = {time}")]
    Explosion { time: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no data near x = {x}: density estimate {density:e} is below the floor")]
    NoDataNear { x: f64, density: f64 },

    #[error("generator expansion unstable at order {order}: {detail}")]
    ExpansionUnstable { order: usize, detail: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (quadrature, explosion, instability)
    /// as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::Numeric(_)
                | Error::Explosion { .. }
                | Error::ExpansionUnstable { .. }
        )
    }
}
