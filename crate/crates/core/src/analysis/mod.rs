//! Post-hoc analyses of trained models: interpolation paths between two
//! checkpoints, weight-space projections, SVCCA similarity of activations,
//! result tables with best and oracle-like markers, and SVG charts.

pub mod interpolation;
pub mod projection;
pub mod report;
pub mod svcca;
pub mod svg;

pub use interpolation::{interpolate_weights, interpolation_grid, interpolation_path, InterpolationPath};
pub use projection::{project_weights, ProjectionPoint};
pub use report::{format_results, Cell, MeanRule, ResultGrid, ResultTable, Summary};
pub use svcca::{layer_activations, svcca, SvccaScore};

use crate::methods::MethodError;
use crate::tensornet::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Method(#[from] MethodError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}
