//! Sparse nonlinear programming stack.
//!
//! `model` defines the adapter contract an optimization problem implements
//! (callbacks for objective, gradient, constraints, sparse Jacobian and
//! Lagrangian Hessian), so the built-in method and any external solver are
//! interchangeable. `ldl` supplies the symmetric indefinite factorization,
//! `ipm` the primal-dual interior-point iteration, `kkt` an independent
//! optimality audit, and `prices` the translation of flow-balance duals into
//! per-node, per-time trade values.

pub mod ipm;
pub mod kkt;
pub mod ldl;
pub mod model;
pub mod prices;

pub use ipm::{
    jacobian_density, solve, IterRecord, KktResiduals, SolveResult, SolveStatus, SolverOptions,
};
pub use kkt::verify_kkt;
pub use model::{NlpModel, Pattern};
pub use prices::{extract_ltv, MassRowMap, PriceSeries};
