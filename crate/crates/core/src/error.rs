use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter outside its domain: {0}")]
    Domain(String),
    #[error("degenerate covariance (determinant {0:e})")]
    DegenerateCovariance(f64),
    #[error("invalid dimensions: {0}")]
    Dimension(String),
    #[error("unsupported scale factor {0}")]
    UnsupportedScale(f64),
    #[error("numerical degeneracy: {0}")]
    Numerical(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
