//! Shift building blocks and the multi-step sequences built from them.

pub mod blocks;
pub mod config;
pub mod persist;
pub mod presets;
pub mod sequence;

pub use blocks::{
    apply_conditional_rotation, apply_corruption, apply_corruption_with, apply_label_flip, apply_red_tint, apply_rotation,
    build_subpop_step, default_direction, flip_label, Direction, ShiftBlock, SubPopSchedule,
};
pub use config::{spec_from_toml, spec_to_toml};
pub use persist::{load_sequence, save_sequence, SequenceManifest};
pub use presets::{preset, rotation_sizes, PRESET_NAMES};
pub use sequence::{apply_shifts, materialize_sequence, MaterializedSequence, SequenceSpec, StepData, StepSpec};

use crate::corpus::CorpusError;

#[derive(Debug, thiserror::Error)]
pub enum ShiftError {
    #[error("invalid sequence spec: {0}")]
    Spec(String),
    #[error("sequence config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("io error on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}
