use thiserror::Error;

/// Errors raised across the laboratory. Variants map onto the failure
/// classes the harness reports (configuration/resolution vs. claim checks).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time {tau} outside flow domain [{lo}, {hi}]")]
    OutsideDomain { tau: f64, lo: f64, hi: f64 },

    #[error("pair is within {guard} of the cut locus (margin {margin})")]
    CutLocus { margin: f64, guard: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("flow is not a {k}-super Ricci flow: margin {margin} at tau = {tau}")]
    NotSuperRicci { k: f64, tau: f64, margin: f64 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("band limit mismatch: expected {expected}, found {found}")]
    BandLimitMismatch { expected: usize, found: usize },

    #[error("clock mismatch: field at tau = {found}, expected {expected}")]
    ClockMismatch { expected: f64, found: f64 },

    #[error("dual heat flow can only run toward smaller tau (from {from} to {to})")]
    IllPosedDirection { from: f64, to: f64 },

    #[error("discretized mass defect {defect:.3e} exceeds {limit:.1e}; cloud under-resolves the density")]
    UnderResolved { defect: f64, limit: f64 },

    #[error("infeasible marginals: source mass {source_mass}, target mass {target_mass}")]
    InfeasibleMarginals { source_mass: f64, target_mass: f64 },

    #[error("problem too large for the exact solver: {rows}x{cols} (limit {limit})")]
    TooLarge { rows: usize, cols: usize, limit: usize },

    #[error("no convergence after {iterations} iterations (error {error:.3e})")]
    NonConvergence { iterations: usize, error: f64 },

    #[error("pair too close to the diagonal: d = {distance}, step = {step}")]
    DiagonalPair { distance: f64, step: f64 },

    #[error("operation requires the exact backward Ricci flow")]
    NotRicciFlow,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
