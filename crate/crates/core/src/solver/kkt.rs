//! From-scratch optimality audit, deliberately independent of the solver's
//! internal bookkeeping: no slack variables, every quantity re-evaluated at
//! the returned point. Complementarity is measured against the raw
//! inequality values rather than the solver's slack estimates.

use crate::solver::ipm::{KktResiduals, SolveResult};
use crate::solver::model::NlpModel;

/// Recomputes stationarity `∇f − J_Eᵀy − J_Iᵀz − zl + zu`, primal
/// feasibility, and complementarity at `result`'s point and multipliers.
pub fn verify_kkt(model: &dyn NlpModel, result: &SolveResult) -> KktResiduals {
    let n = model.n_vars();
    let m_eq = model.n_eq();
    let m_ineq = model.n_ineq();
    let (lb, ub) = model.bounds();
    let x = &result.x;

    let mut stat = vec![0.0; n];
    model.gradient(x, &mut stat);
    let je = model.eq_jacobian_pattern();
    let ji = model.ineq_jacobian_pattern();
    let mut je_vals = vec![0.0; je.len()];
    let mut ji_vals = vec![0.0; ji.len()];
    model.jacobian_values(x, &mut je_vals, &mut ji_vals);
    for ((&r, &c), &v) in je.rows.iter().zip(&je.cols).zip(&je_vals) {
        stat[c] -= v * result.eq_duals[r];
    }
    for ((&r, &c), &v) in ji.rows.iter().zip(&ji.cols).zip(&ji_vals) {
        stat[c] -= v * result.ineq_duals[r];
    }
    for i in 0..n {
        stat[i] += -result.lower_duals[i] + result.upper_duals[i];
    }

    let mut ce = vec![0.0; m_eq];
    let mut ci = vec![0.0; m_ineq];
    model.eq_constraints(x, &mut ce);
    model.ineq_constraints(x, &mut ci);

    let mut ineq_violation = 0.0f64;
    let mut comp = 0.0f64;
    for j in 0..m_ineq {
        ineq_violation = ineq_violation.max((-ci[j]).max(0.0));
        comp = comp.max((result.ineq_duals[j] * ci[j]).abs());
    }
    for i in 0..n {
        if lb[i].is_finite() {
            ineq_violation = ineq_violation.max(lb[i] - x[i]);
            comp = comp.max((result.lower_duals[i] * (x[i] - lb[i])).abs());
        }
        if ub[i].is_finite() {
            ineq_violation = ineq_violation.max(x[i] - ub[i]);
            comp = comp.max((result.upper_duals[i] * (ub[i] - x[i])).abs());
        }
    }

    KktResiduals {
        stationarity: stat.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        eq: ce.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        ineq: ineq_violation,
        complementarity: comp,
    }
}
