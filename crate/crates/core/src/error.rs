use thiserror::Error;

/// Location of a grid point, reported in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointInfo {
    pub index: usize,
    /// Chart coordinates of the point (x₁, x₂[, x₃, x₄]) or (ρ, θ).
    pub coords: [f64; 4],
}

impl std::fmt::Display for PointInfo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "#{} ({:.6}, {:.6}, {:.6}, {:.6})",
            self.index, self.coords[0], self.coords[1], self.coords[2], self.coords[3]
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite value at {0}")]
    NonFinite(PointInfo),
    #[error("metric not positive definite at {point}: minimum eigenvalue {min_eigenvalue:e}")]
    NotPositive {
        point: PointInfo,
        min_eigenvalue: f64,
    },
    #[error("operation not supported on this chart: {0}")]
    UnsupportedChart(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-positive value {value:e} at {point}")]
    NonPositiveValue { point: PointInfo, value: f64 },
    #[error(
        "newton iteration diverged after {iterations} iterations (residual history {history:?})"
    )]
    NewtonDivergence {
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("newton iteration did not converge in {iterations} iterations (final residual {residual:e})")]
    NewtonMaxIterations { iterations: usize, residual: f64 },
    #[error("linear solver stalled: relative residual {0:e}")]
    LinearSolver(f64),
    #[error("continuation failed at t = {t}: {source}")]
    Continuation {
        t: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("flow step failed at t = {t} after {halvings} step halvings: {source}")]
    FlowAbort {
        t: f64,
        halvings: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("density was not built by the consistent construction; pass force to evaluate anyway")]
    InconsistentDensity,
    #[error("not enough data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
