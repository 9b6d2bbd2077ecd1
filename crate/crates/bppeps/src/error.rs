use thiserror::Error;

/// Errors surfaced by the library. Each variant maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("{routine} did not converge within {sweeps} sweeps")]
    NoConvergence { routine: &'static str, sweeps: usize },
    #[error("message trace on edge {src}->{dst} fell to {trace:e}; the site tensor is not injective (delta = 0)")]
    VanishingTrace { src: usize, dst: usize, trace: f64 },
    #[error("BP normalization ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("excitation projector overlap {0:e} below guard")]
    ProjectorOverlap(f64),
    #[error("refusing Ursell evaluation for n_W = {0} > 12")]
    UrsellTooLarge(usize),
    #[error("no convergence certificate: achieved rate c = {c} <= c0 = {c0}")]
    NoCertificate { c: f64, c0: f64 },
    #[error("stability guard violated: {0}")]
    StabilityGuard(String),
    #[error("oracle budget exceeded: {0}")]
    OracleBudget(String),
    #[error("BP estimate below guard: {0}")]
    BpGuard(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
