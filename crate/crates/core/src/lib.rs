//! Transient optimization of natural-gas pipeline networks.
//!
//! The crate models a pipeline network as a graph of friction-dominated pipes
//! joined at nodes, with compressors boosting pressure on designated edges.
//! Gas transfers (purchases and sales) at selected nodes are decision
//! variables; everything else follows from mass balance and a lumped momentum
//! law on each pipe segment.
//!
//! The main entry points are:
//!
//! * [`network`]: network description, validation, segment refinement, and
//!   conversion to dimensionless units.
//! * [`transcription`]: assembly of the time-periodic optimal control problem
//!   on a circular collocation grid.
//! * [`solver`]: a sparse primal-dual interior-point method and utilities for
//!   checking first-order optimality.
//! * [`solver::prices`]: locational trade values recovered from the duals of
//!   the nodal balance constraints.
//! * [`simulator`]: an independent time-stepping integrator used to validate
//!   optimization output against the underlying dynamics.

pub mod dynamics;
pub mod error;
pub mod grid;
pub mod io;
pub mod market;
pub mod network;
pub mod simulator;
pub mod solver;
pub mod sparse;
pub mod transcription;

pub use error::{Error, Result};
