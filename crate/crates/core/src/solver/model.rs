//! Adapter contract between problem assembly and any NLP solver.
//!
//! The built-in interior-point method consumes this trait; an external solver
//! can be wired to the same callbacks. Conventions:
//!
//! * minimize `objective` subject to `eq(x) = 0`, `ineq(x) ≥ 0`,
//!   `lower ≤ x ≤ upper` (entries may be infinite);
//! * Jacobian and Hessian sparsity patterns are fixed; values are refilled
//!   into slices aligned with the pattern;
//! * patterns may list the same (row, col) slot more than once; consumers
//!   accumulate the aligned values (structurally convenient for assemblies
//!   where several physical terms land on one entry);
//! * the Lagrangian is `f − λᵀ·eq − νᵀ·ineq`, so its Hessian subtracts
//!   constraint curvature; the Hessian pattern covers the lower triangle.

/// Fixed sparsity pattern as parallel (row, col) lists.
#[derive(Debug, Clone, Default)]
pub struct Pattern {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Pattern {
    pub fn push(&mut self, row: usize, col: usize) {
        self.rows.push(row);
        self.cols.push(col);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub trait NlpModel {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;

    /// Variable bounds; `f64::NEG_INFINITY`/`f64::INFINITY` mark absent ones.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    /// Starting point; the solver pushes it strictly inside the bounds.
    fn initial_point(&self) -> Vec<f64>;

    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);

    fn eq_constraints(&self, x: &[f64], out: &mut [f64]);
    fn ineq_constraints(&self, x: &[f64], out: &mut [f64]);

    fn eq_jacobian_pattern(&self) -> Pattern;
    fn ineq_jacobian_pattern(&self) -> Pattern;
    /// Values aligned with the two patterns, evaluated at `x`.
    fn jacobian_values(&self, x: &[f64], eq_vals: &mut [f64], ineq_vals: &mut [f64]);

    /// Lower triangle (row ≥ col) of ∇²f − Σλ∇²eq − Σν∇²ineq.
    fn hessian_pattern(&self) -> Pattern;
    fn hessian_values(&self, x: &[f64], lam_eq: &[f64], lam_ineq: &[f64], vals: &mut [f64]);
}
