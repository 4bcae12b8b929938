//! Market layer: transfer nodes carrying bids and offers, baseline flows,
//! deviation bounds, injection composition, and the surplus objective.
//!
//! Bid data arrives as hourly profiles; [`MarketData::sample`] aligns
//! everything onto one collocation grid. Quantities follow the withdrawal
//! sign convention: purchases add to a node's withdrawal, sales subtract.

use crate::error::{Error, Result};
use crate::grid::CollocationGrid;
use crate::network::Profile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Buyer,
    Seller,
}

/// One market participant attached to a physical non-slack node. A buyer bids
/// a price it will pay per unit of extra gas delivered; a seller offers a
/// price it asks per unit of reduced delivery (or extra supply).
#[derive(Debug, Clone)]
pub struct TransferNode {
    pub id: String,
    /// Index of the attached node in canonical (slack-first) order.
    pub node: usize,
    pub role: Role,
    pub price: Profile,
    pub qty_min: Profile,
    pub qty_max: Profile,
}

/// Contracted baseline withdrawal per free node (grid-independent profiles).
#[derive(Debug, Clone)]
pub struct BaselineFlow {
    /// Indexed by free-node position (global index − slack count).
    pub per_free: Vec<Profile>,
}

impl BaselineFlow {
    pub fn zero(n_free: usize) -> Self {
        Self {
            per_free: vec![Profile::Constant(0.0); n_free],
        }
    }
}

/// Deviation series per transfer node on the grid: purchases for buyers,
/// sales for sellers.
#[derive(Debug, Clone)]
pub struct TransferSchedule {
    pub quantities: Vec<Vec<f64>>,
}

impl TransferSchedule {
    pub fn zero(n_transfers: usize, n_points: usize) -> Self {
        Self {
            quantities: vec![vec![0.0; n_points]; n_transfers],
        }
    }
}

/// All market series sampled onto one collocation grid.
#[derive(Debug, Clone)]
pub struct MarketData {
    pub transfers: Vec<TransferNode>,
    /// [transfer][grid point].
    pub price: Vec<Vec<f64>>,
    pub qty_min: Vec<Vec<f64>>,
    pub qty_max: Vec<Vec<f64>>,
    /// [free node][grid point].
    pub baseline: Vec<Vec<f64>>,
    pub n_slack: usize,
}

impl MarketData {
    /// Samples hourly profiles at the given per-grid-point hours. `sample`
    /// decides how a profile is read (plain wrap or an extended-horizon
    /// blend), so the same data serves both periodic and rolled problems.
    pub fn sample(
        transfers: Vec<TransferNode>,
        baseline: &BaselineFlow,
        n_slack: usize,
        hours: &[f64],
        sample: impl Fn(&Profile, f64) -> f64,
    ) -> Result<MarketData> {
        let n_free = baseline.per_free.len();
        for t in &transfers {
            if t.node < n_slack {
                return Err(Error::InvalidInput(format!(
                    "transfer `{}` attaches to a slack node; supply there is already free",
                    t.id
                )));
            }
            if t.node >= n_slack + n_free {
                return Err(Error::InvalidInput(format!(
                    "transfer `{}` references node index {} out of range",
                    t.id, t.node
                )));
            }
        }
        let grid_sample =
            |p: &Profile| -> Vec<f64> { hours.iter().map(|h| sample(p, *h)).collect() };
        let price: Vec<Vec<f64>> = transfers.iter().map(|t| grid_sample(&t.price)).collect();
        let qty_min: Vec<Vec<f64>> = transfers.iter().map(|t| grid_sample(&t.qty_min)).collect();
        let qty_max: Vec<Vec<f64>> = transfers.iter().map(|t| grid_sample(&t.qty_max)).collect();
        for (m, t) in transfers.iter().enumerate() {
            for k in 0..hours.len() {
                if qty_min[m][k] > qty_max[m][k] {
                    return Err(Error::InvalidInput(format!(
                        "transfer `{}` has qty_min > qty_max at grid point {k}",
                        t.id
                    )));
                }
            }
        }
        Ok(MarketData {
            transfers,
            price,
            qty_min,
            qty_max,
            baseline: baseline.per_free.iter().map(grid_sample).collect(),
            n_slack,
        })
    }

    pub fn n_transfers(&self) -> usize {
        self.transfers.len()
    }

    pub fn n_points(&self) -> usize {
        self.baseline.first().map_or(0, |b| b.len())
    }

    /// Total withdrawal per free node and grid point:
    /// q_j = q̄_j + Σ purchases at j − Σ sales at j.
    pub fn compose_injection(&self, schedule: &TransferSchedule) -> Vec<Vec<f64>> {
        let mut q = self.baseline.clone();
        for (m, t) in self.transfers.iter().enumerate() {
            let j = t.node - self.n_slack;
            let sign = match t.role {
                Role::Buyer => 1.0,
                Role::Seller => -1.0,
            };
            for (qk, dk) in q[j].iter_mut().zip(&schedule.quantities[m]) {
                *qk += sign * dk;
            }
        }
        q
    }

    /// Bid value of a schedule: willingness-to-pay of cleared purchases minus
    /// offers of cleared sales, integrated over the grid.
    pub fn surplus(&self, schedule: &TransferSchedule, grid: &CollocationGrid) -> f64 {
        let w = grid.weight();
        let mut total = 0.0;
        for (m, t) in self.transfers.iter().enumerate() {
            let sign = match t.role {
                Role::Buyer => 1.0,
                Role::Seller => -1.0,
            };
            for (c, d) in self.price[m].iter().zip(&schedule.quantities[m]) {
                total += sign * c * d * w;
            }
        }
        total
    }
}

/// Integral of all baseline withdrawals over one period. A balanced primary
/// market nets to zero; the caller decides how much imbalance to tolerate.
pub fn check_baseline_balance(baseline_samples: &[Vec<f64>], grid: &CollocationGrid) -> f64 {
    let w = grid.weight();
    baseline_samples
        .iter()
        .flat_map(|series| series.iter())
        .map(|q| q * w)
        .sum()
}

/// One-sided deviation envelopes per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct BidBounds {
    pub d_min: Vec<f64>,
    pub d_max: Vec<f64>,
    pub s_min: Vec<f64>,
    pub s_max: Vec<f64>,
}

/// Converts a desired total-flow bid b̄ against a baseline q̄ into deviation
/// bounds: purchase room where the bid exceeds the baseline, sale room where
/// it falls short, never both.
pub fn bounds_from_bid(baseline: &[f64], bid: &[f64]) -> Result<BidBounds> {
    if baseline.len() != bid.len() {
        return Err(Error::DimensionMismatch(format!(
            "baseline has {} samples, bid {}",
            baseline.len(),
            bid.len()
        )));
    }
    let n = baseline.len();
    let mut out = BidBounds {
        d_min: vec![0.0; n],
        d_max: vec![0.0; n],
        s_min: vec![0.0; n],
        s_max: vec![0.0; n],
    };
    for k in 0..n {
        out.d_max[k] = (bid[k] - baseline[k]).max(0.0);
        out.s_max[k] = (baseline[k] - bid[k]).max(0.0);
    }
    Ok(out)
}
