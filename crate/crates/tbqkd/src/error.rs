use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("order {order} exceeds the maximum supported order {max}")]
    OrderOverflow { order: usize, max: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("undefined rate: {0}")]
    UndefinedRate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inconsistent statistics: {0}")]
    Infeasible(String),
    #[error("missing data: {0}")]
    Missing(String),
    #[error("failure-probability budget exhausted: {0}")]
    Budget(String),
    #[error("unbounded kernel: detector efficiency {0} must exceed 1/2")]
    UnboundedKernel(f64),
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by the caller's parameters rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Domain(_) | Error::OrderOverflow { .. } | Error::UnboundedKernel(_) | Error::Missing(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
