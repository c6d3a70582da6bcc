//! Temporal instance-level scene models from sparse indoor rescans.
//!
//! Each new scan goes through one induction step: candidate object poses are
//! proposed by dense ground-plane search with ICP refinement, a global object
//! arrangement is selected by greedy construction plus simulated annealing,
//! instance and semantic labels are transferred onto the scan, and the
//! placed objects' geometry is fused with their new observations.

pub mod config;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod pipeline;
pub mod ply;
pub mod proposal;
pub mod scan;
pub mod synth;
pub mod transfer;
pub mod viz;

pub use error::{Error, Result};
