//! Solver library for density-based topology optimization of flow fields in
//! the negative half-cell of a vanadium redox flow battery.
//!
//! Pipeline: [`geometry`] builds the two-layer grid, [`flow`] solves Brinkman
//! flow for a density field, [`electrochem`] solves species transport and
//! charge conservation with Butler–Volmer kinetics, [`topopt`] filters,
//! differentiates and updates the design, and [`flowfields`] evaluates
//! reference and optimized layouts at matched operating points.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dual;
pub mod electrochem;
pub mod error;
pub mod flow;
pub mod flowfields;
pub mod geometry;
pub mod sparse;
pub mod topopt;

pub use config::{CaseConfig, ConductivityMode, Side};
pub use electrochem::{solve_electrochemistry, ElectroState};
pub use error::{Error, Result};
pub use flow::{solve_flow, FlowState, InversePermeabilityField};
pub use geometry::{build_grid, permeability, Grid, Patch, Region};
pub use sparse::set_threads;
pub use topopt::{DensityField, IterationRecord, Optimizer, OptimizerState};
