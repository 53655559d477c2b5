//! Covariate and conditional shift metrics: PCA followed by exact optimal transport.

pub mod pca;
pub mod report;
pub mod transport;

pub use pca::{fit_pca, PcaModel};
pub use report::{metrics_from_points, shift_report, shift_report_with_pca, ProjectedSet, ShiftConfig, ShiftReport, StepShift};
pub use transport::{conditional_wasserstein2, euclidean, solve_transport, wasserstein2, TransportPlan};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("point sets must be nonempty")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("class {0} occurs in the target set but not in the source set")]
    MissingClass(usize),
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("transport solver: {0}")]
    Solver(String),
}
