//! Benchmark engine for sequential temporal distribution shift.
//!
//! The crate synthesizes sequences of shifted image-classification datasets
//! ([`shiftgen`]) from CIFAR-format corpora ([`corpus`]), trains adaptation
//! methods that target the final time step ([`methods`]) on a small CPU
//! network engine ([`tensornet`]), measures the shift with exact optimal
//! transport ([`shiftmetrics`]) and produces post-hoc analyses and result
//! tables ([`analysis`]).

pub mod analysis;
pub mod corpus;
pub mod methods;
pub mod rng;
pub mod shiftgen;
pub mod shiftmetrics;
pub mod tensornet;

pub use rng::SplitMix64;
