//! Numerical laboratory for the collapsing Kähler-Ricci flow on elliptic
//! fibrations over a curve.

pub mod error;
pub mod fibration;
pub mod flow;
pub mod gke;
pub mod grid;
pub mod k3;
pub mod krylov;
pub mod radial;
pub mod semiflat;
pub mod spectral;
pub mod wp;

pub use error::{Error, PointInfo, Result};
pub use fibration::{FibrationConfig, KodairaKind, KodairaModel, MultipleFiber};
pub use flow::{
    run_flow, FlowProblem, FlowRun, FlowSettings, FlowState, MonitorRecord, Seed, MONITOR_COLUMNS,
};
pub use gke::{solve_gke, GkeProblem, GkeSolution, Lambda};
pub use grid::{
    complex_hessian, integrate, ma_density, poisson_solve, trace_pair, BaseGrid, Chart, Grid,
    Herm2, HermitianField, ScalarField, TotalGrid,
};
pub use k3::{solve_family, FamilyProblem, FamilyRun};
pub use semiflat::DensityField;
