//! Locational trade values from converged multipliers.
//!
//! The optimizer minimizes the negated market surplus, and each nodal
//! flow-balance row carries the factor 4 from the lumped mass equation, with
//! quadrature weight w absorbed into the constraint rows. Undoing those
//! factors, the per-unit-time marginal value of gas leaving node j at grid
//! point k is
//!
//! ```text
//! λ_j(t_k) = −4 · y_jk / w_k
//! ```
//!
//! where y_jk is the equality dual returned by the solver. At a grid point
//! where a buyer's purchase is strictly inside its bounds, stationarity in
//! that purchase forces λ_j(t_k) to equal the bid price, which fixes both the
//! sign convention and the scale.

use crate::error::{Error, Result};
use crate::grid::CollocationGrid;
use crate::solver::ipm::{SolveResult, SolveStatus};

/// Trade value per free node per grid point, `values[j][k]`.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    pub values: Vec<Vec<f64>>,
}

impl PriceSeries {
    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn n_points(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// Locates the nodal flow-balance equality rows inside the stacked
/// constraint vector: row(j, k) = k·stride + offset + j.
#[derive(Debug, Clone, Copy)]
pub struct MassRowMap {
    pub n_free: usize,
    pub n_points: usize,
    /// Number of equality rows per grid point.
    pub stride: usize,
    /// Index of the first flow-balance row within each grid point's block.
    pub offset: usize,
}

impl MassRowMap {
    pub fn row(&self, node: usize, point: usize) -> usize {
        debug_assert!(node < self.n_free && point < self.n_points);
        point * self.stride + self.offset + node
    }
}

/// Extracts λ_j(t_k) from an optimal solve. `scale` converts from the
/// problem's working units to reporting units (1 when both are the same).
pub fn extract_ltv(
    result: &SolveResult,
    rows: &MassRowMap,
    grid: &CollocationGrid,
    scale: f64,
) -> Result<PriceSeries> {
    if result.status != SolveStatus::Optimal {
        return Err(Error::NonOptimal(format!(
            "trade values require an optimal solve, status was {:?}",
            result.status
        )));
    }
    if grid.n() != rows.n_points {
        return Err(Error::DimensionMismatch(format!(
            "row map covers {} grid points, grid has {}",
            rows.n_points,
            grid.n()
        )));
    }
    let needed = rows.row(rows.n_free - 1, rows.n_points - 1) + 1;
    if result.eq_duals.len() < needed {
        return Err(Error::DimensionMismatch(format!(
            "row map addresses {} equality duals, solve returned {}",
            needed,
            result.eq_duals.len()
        )));
    }

    let w = grid.weight();
    let mut values = vec![vec![0.0; rows.n_points]; rows.n_free];
    for j in 0..rows.n_free {
        for k in 0..rows.n_points {
            let v = -4.0 * result.eq_duals[rows.row(j, k)] / w * scale;
            if !v.is_finite() {
                return Err(Error::NonOptimal(format!(
                    "non-finite trade value at node {j}, grid point {k}"
                )));
            }
            values[j][k] = v;
        }
    }
    Ok(PriceSeries { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::ipm::{KktResiduals, SolveStatus};
    use approx::assert_relative_eq;

    fn dummy_result(eq_duals: Vec<f64>, status: SolveStatus) -> SolveResult {
        SolveResult {
            status,
            x: vec![],
            eq_duals,
            ineq_duals: vec![],
            lower_duals: vec![],
            upper_duals: vec![],
            slacks: vec![],
            objective: 0.0,
            kkt: KktResiduals::default(),
            iterations: 0,
            log: vec![],
        }
    }

    #[test]
    fn recovers_bid_price_from_stationarity_duals() {
        // 2 free nodes, 3 grid points, 5 equality rows per point (2 mass
        // then 3 momentum). A buyer at node j strictly inside its bounds has
        // y_jk = −c·w/4; the extraction must hand back exactly c.
        let grid = CollocationGrid::new(6.0, 3).unwrap();
        let rows = MassRowMap { n_free: 2, n_points: 3, stride: 5, offset: 0 };
        let w = grid.weight();
        let prices = [[3.0, 5.0, 4.0], [7.0, 2.0, 6.0]];
        let mut duals = vec![9.9; 15];
        for j in 0..2 {
            for k in 0..3 {
                duals[rows.row(j, k)] = -prices[j][k] * w / 4.0;
            }
        }
        let ltv = extract_ltv(&dummy_result(duals.clone(), SolveStatus::Optimal), &rows, &grid, 1.0)
            .unwrap();
        for j in 0..2 {
            for k in 0..3 {
                assert_relative_eq!(ltv.values[j][k], prices[j][k], epsilon = 1e-12);
            }
        }
        // Dual homogeneity: doubling every multiplier doubles every value.
        let doubled: Vec<f64> = duals.iter().map(|d| 2.0 * d).collect();
        let ltv2 =
            extract_ltv(&dummy_result(doubled, SolveStatus::Optimal), &rows, &grid, 1.0).unwrap();
        for j in 0..2 {
            for k in 0..3 {
                assert_relative_eq!(ltv2.values[j][k], 2.0 * prices[j][k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unit_scale_applies_linearly() {
        let grid = CollocationGrid::new(4.0, 2).unwrap();
        let rows = MassRowMap { n_free: 1, n_points: 2, stride: 1, offset: 0 };
        let duals = vec![-1.0, -2.0];
        let ltv = extract_ltv(&dummy_result(duals, SolveStatus::Optimal), &rows, &grid, 0.5)
            .unwrap();
        // −4·(−1)/2·0.5 = 1 and −4·(−2)/2·0.5 = 2.
        assert_relative_eq!(ltv.values[0][0], 1.0);
        assert_relative_eq!(ltv.values[0][1], 2.0);
    }

    #[test]
    fn rejects_non_optimal_results() {
        let grid = CollocationGrid::new(4.0, 2).unwrap();
        let rows = MassRowMap { n_free: 1, n_points: 2, stride: 1, offset: 0 };
        let err = extract_ltv(
            &dummy_result(vec![0.0, 0.0], SolveStatus::MaxIterations),
            &rows,
            &grid,
            1.0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_short_dual_vectors() {
        let grid = CollocationGrid::new(4.0, 2).unwrap();
        let rows = MassRowMap { n_free: 2, n_points: 2, stride: 4, offset: 1 };
        let err = extract_ltv(&dummy_result(vec![0.0; 5], SolveStatus::Optimal), &rows, &grid, 1.0);
        assert!(err.is_err());
    }
}
