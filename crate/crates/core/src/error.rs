use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("derivative order exceeds budget: {0}")]
    DerivativeOrder(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("zone error: {0}")]
    Zone(String),
    #[error("spectral gap error: {0}")]
    SpectralGap(String),
    #[error("ill-conditioned eigenbasis: {0}")]
    Conditioning(String),
    #[error("diagonalisation error: {0}")]
    Diagonalization(String),
    #[error("propagation error: {0}")]
    Propagation(String),
    #[error("assumption failed: {0}")]
    Assumption(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("degenerate phase: {0}")]
    DegeneratePhase(String),
    #[error("oscillatory quadrature error: {0}")]
    Oscillatory(String),
    #[error("decay fit error: {0}")]
    Fit(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
