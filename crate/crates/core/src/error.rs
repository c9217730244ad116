use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument {re}+{im}i lies on the branch cut")]
    BranchCut { re: f64, im: f64 },
    #[error("value at {re}+{im}i overflows; use the factored form")]
    Overflow { re: f64, im: f64 },
    #[error("argument within guard distance of the Airy zero {nu}")]
    PoleProximity { nu: f64 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("region violation: {0}")]
    Region(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("resolution guard: {0}")]
    Resolution(String),
    #[error("envelope exceeded: {0}")]
    Envelope(String),
    #[error("J_{order} vanishes near {re}+{im}i")]
    BesselZero { order: i64, re: f64, im: f64 },
    #[error("root on contour after {0} retries")]
    ContourRetries(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
