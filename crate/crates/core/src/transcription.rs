//! Transcription of the periodic flow-scheduling problem onto a circular
//! collocation grid, producing a sparse [`NlpModel`] the interior-point solver
//! consumes directly.
//!
//! Decision variables are laid out time-major: all unknowns at grid point k
//! (free densities, edge fluxes, boost ratios, transfer quantities) precede
//! those at k+1. Equality rows stack the nodal mass balance and the per-edge
//! momentum law at every point; the circular difference stencil supplies the
//! density rates, so time periodicity needs no extra constraint rows.
//! Objective and gradient come straight from the bid surplus.
//!
//! Pressure limits at boosted pipe ends and station power limits become
//! inequality rows; every other box (density windows, uncompressed pipe caps,
//! ratio and quantity ranges) folds into variable bounds. A rolling-horizon
//! step re-anchors the first grid point with extra pin rows instead.

use crate::dynamics::{
    mass_residual, momentum_residual, signed_square_d1, signed_square_d2, smooth_abs,
    smooth_abs_d1, smooth_abs_d2, steady_state_solve, SystemState,
};
use crate::error::{Error, Result};
use crate::grid::CollocationGrid;
use crate::market::{BaselineFlow, MarketData, Role, TransferNode, TransferSchedule};
use crate::network::{IncidenceMatrices, Network, Profile, Units};
use crate::solver::{MassRowMap, NlpModel, Pattern};

/// Linear blend closing a data horizon onto its own start: inside [0, T) a
/// profile is read as-is, on [T, T+τ) it ramps from the final value back to
/// the initial one, and lookups wrap with period T+τ. This turns arbitrary
/// boundary data into data a periodic scheme can consume.
#[derive(Debug, Clone, Copy)]
pub struct HorizonData {
    horizon: f64,
    tau: f64,
}

impl HorizonData {
    /// `horizon` and `tau` are in hours; both must be positive.
    pub fn new(horizon: f64, tau: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidInput("data horizon must be positive".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(
                "horizon extension needs a positive ramp length".into(),
            ));
        }
        Ok(Self { horizon, tau })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Total period T+τ of the extended series.
    pub fn extended(&self) -> f64 {
        self.horizon + self.tau
    }

    /// Samples a profile through the extension: the ramp interpolates from
    /// the profile's final value at T to its initial value at T+τ.
    pub fn sample(&self, p: &Profile, hour: f64) -> f64 {
        let t = hour.rem_euclid(self.extended());
        if t < self.horizon {
            p.sample(t)
        } else {
            p.end() + (p.start() - p.end()) * (t - self.horizon) / self.tau
        }
    }
}

/// Assembly options. `hour_offset` shifts all profile lookups, which is how a
/// rolling horizon advances through the data.
#[derive(Debug, Clone, Copy)]
pub struct TranscribeOptions {
    /// Smoothing δ for |Φ| in the momentum law and power limits.
    pub smoothing: f64,
    /// Hours added to every profile lookup.
    pub hour_offset: f64,
    /// When set, profiles are read through the end-to-start blend.
    pub extension: Option<HorizonData>,
}

impl Default for TranscribeOptions {
    fn default() -> Self {
        Self {
            smoothing: 1e-6,
            hour_offset: 0.0,
            extension: None,
        }
    }
}

/// Per-compressor data resolved against the refined network.
#[derive(Debug, Clone)]
struct CompressorSite {
    edge: usize,
    /// Global index of the node whose density the station boosts.
    end: usize,
    /// Free index of that node; `None` when it is a supply node.
    free_end: Option<usize>,
    /// Scale of the power inequality 1 − coef·|Φ|·(α^h − 1) ≥ 0; `None`
    /// when the station is unlimited.
    power_coef: Option<f64>,
    exponent: f64,
}

/// The transcribed problem: dimensions, bounds, residuals, derivatives, and
/// read-back of physical series from a solution vector.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    net: Network,
    inc: IncidenceMatrices,
    grid: CollocationGrid,
    market: MarketData,
    baseline: BaselineFlow,
    opts: TranscribeOptions,
    /// Supply densities per grid point, `sigma[k][slack index]`.
    sigma: Vec<Vec<f64>>,
    sigma_dot: Vec<Vec<f64>>,
    sites: Vec<CompressorSite>,
    /// Sites (by compressor index) that boost a free node: one pressure-cap
    /// inequality row each per grid point.
    maop_sites: Vec<usize>,
    /// Sites with a finite power limit: one power row each per grid point.
    power_sites: Vec<usize>,
    /// Tail/head compressor of each edge, if any.
    edge_comp: Vec<(Option<usize>, Option<usize>)>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    init: Vec<f64>,
    /// Free densities pinned at the first grid point by a rolling step.
    pin: Option<Vec<f64>>,
}

fn role_sign(role: Role) -> f64 {
    match role {
        Role::Buyer => 1.0,
        Role::Seller => -1.0,
    }
}

/// Builds the sparse program for one horizon. The network must be refined and
/// dimensionless; profiles are read at `grid` points converted to hours (plus
/// any offset), through the horizon extension when one is configured.
pub fn transcribe(
    net: &Network,
    transfers: Vec<TransferNode>,
    baseline: &BaselineFlow,
    grid: CollocationGrid,
    opts: TranscribeOptions,
) -> Result<NlpProblem> {
    if net.units != Units::Nondim {
        return Err(Error::InvalidInput(
            "transcription expects a dimensionless network".into(),
        ));
    }
    let scaling = net
        .scaling
        .ok_or_else(|| Error::InvalidInput("dimensionless network lacks its scaling".into()))?;
    if !(opts.smoothing > 0.0) {
        return Err(Error::InvalidInput(
            "flux smoothing must be positive".into(),
        ));
    }
    if baseline.per_free.len() != net.n_free() {
        return Err(Error::DimensionMismatch(format!(
            "baseline covers {} nodes, network has {} free nodes",
            baseline.per_free.len(),
            net.n_free()
        )));
    }

    let inc = net.incidence()?;
    let (s, m_free, n_edge) = (net.n_slack(), net.n_free(), net.n_edges());
    let n_pts = grid.n();
    let hours: Vec<f64> = grid
        .points()
        .iter()
        .map(|t| scaling.time_to_hours(*t) + opts.hour_offset)
        .collect();
    let sample = |p: &Profile, h: f64| match &opts.extension {
        Some(ext) => ext.sample(p, h),
        None => p.sample(h),
    };
    let market = MarketData::sample(transfers, baseline, s, &hours, sample)?;

    // Supply densities and their rates on the grid.
    let mut sigma = vec![vec![0.0; s]; n_pts];
    for (i, node) in net.nodes.iter().take(s).enumerate() {
        let p = node.slack_density.as_ref().expect("slack node");
        for (k, h) in hours.iter().enumerate() {
            sigma[k][i] = sample(p, *h);
        }
        for (k, &v) in sigma.iter().map(|row| &row[i]).enumerate() {
            if !(v >= node.density_min && v <= node.density_max) {
                return Err(Error::InvalidInput(format!(
                    "supply density {v} at `{}` leaves [{}, {}] at grid point {k}",
                    node.id, node.density_min, node.density_max
                )));
            }
        }
    }
    let rate = grid.diff().rate();
    let mut sigma_dot = vec![vec![0.0; s]; n_pts];
    for k in 0..n_pts {
        for i in 0..s {
            sigma_dot[k][i] = (sigma[(k + 1) % n_pts][i] - sigma[k][i]) * rate;
        }
    }

    // Compressor sites and the per-point inequality layout.
    let mut sites = Vec::with_capacity(net.compressors.len());
    let mut edge_comp = vec![(None, None); n_edge];
    for (ci, c) in net.compressors.iter().enumerate() {
        let (u, v) = inc.ends[c.edge];
        let end = if c.at_outlet { v } else { u };
        if c.at_outlet {
            edge_comp[c.edge].1 = Some(ci);
        } else {
            edge_comp[c.edge].0 = Some(ci);
        }
        let power_coef = c.power_max.is_finite().then(|| {
            c.energy_coeff() * inc.area[c.edge] * scaling.mass_flow() / c.power_max
        });
        sites.push(CompressorSite {
            edge: c.edge,
            end,
            free_end: (end >= s).then(|| end - s),
            power_coef,
            exponent: c.exponent(),
        });
    }
    let maop_sites: Vec<usize> = sites
        .iter()
        .enumerate()
        .filter(|(_, st)| st.free_end.is_some())
        .map(|(i, _)| i)
        .collect();
    let power_sites: Vec<usize> = sites
        .iter()
        .enumerate()
        .filter(|(_, st)| st.power_coef.is_some())
        .map(|(i, _)| i)
        .collect();

    // Density windows: node bounds tightened by the caps of uncompressed
    // incident pipe ends. Boosted ends keep the cap as an inequality (free
    // node) or as a ratio bound (supply node) instead.
    let rho_lb: Vec<f64> = net.nodes[s..].iter().map(|nd| nd.density_min).collect();
    let mut rho_ub: Vec<f64> = net.nodes[s..].iter().map(|nd| nd.density_max).collect();
    for (e, &(u, v)) in inc.ends.iter().enumerate() {
        let cap = net.pipes[e].density_max;
        for (end, comp) in [(u, edge_comp[e].0), (v, edge_comp[e].1)] {
            if comp.is_some() {
                continue;
            }
            if end >= s {
                rho_ub[end - s] = rho_ub[end - s].min(cap);
            } else if let Some(k) = (0..n_pts).find(|&k| sigma[k][end] > cap) {
                return Err(Error::InvalidInput(format!(
                    "supply density at `{}` exceeds the cap of pipe `{}` at grid point {k}",
                    net.nodes[end].id, net.pipes[e].id
                )));
            }
        }
    }
    for j in 0..m_free {
        if rho_lb[j] > rho_ub[j] {
            return Err(Error::InvalidInput(format!(
                "density window at `{}` is empty once pipe caps fold in ({} > {})",
                net.nodes[s + j].id,
                rho_lb[j],
                rho_ub[j]
            )));
        }
    }

    // Full bound vectors in time-major layout.
    let n_comp = sites.len();
    let n_tr = market.n_transfers();
    let v_pt = m_free + n_edge + n_comp + n_tr;
    let n_vars = v_pt * n_pts;
    let mut lb = vec![f64::NEG_INFINITY; n_vars];
    let mut ub = vec![f64::INFINITY; n_vars];
    for k in 0..n_pts {
        let base = k * v_pt;
        for j in 0..m_free {
            lb[base + j] = rho_lb[j];
            ub[base + j] = rho_ub[j];
        }
        for (ci, site) in sites.iter().enumerate() {
            let col = base + m_free + n_edge + ci;
            lb[col] = 1.0;
            let mut hi = net.compressors[ci].ratio_max;
            if site.free_end.is_none() {
                // Boosting a known supply density: the pipe cap becomes a
                // per-point ratio limit.
                hi = hi.min(net.pipes[site.edge].density_max / sigma[k][site.end]);
                if hi < 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "supply density at grid point {k} exceeds the cap of pipe `{}` \
                         even without boost",
                        net.pipes[site.edge].id
                    )));
                }
            }
            ub[col] = hi;
        }
        for m in 0..n_tr {
            let col = base + m_free + n_edge + n_comp + m;
            lb[col] = market.qty_min[m][k];
            ub[col] = market.qty_max[m][k];
        }
    }

    // Start from the steady state of the horizon-averaged data, replicated
    // over the grid, with idle stations and no cleared transfers.
    let sigma_mean: Vec<f64> = (0..s)
        .map(|i| sigma.iter().map(|row| row[i]).sum::<f64>() / n_pts as f64)
        .collect();
    let q_mean: Vec<f64> = (0..m_free)
        .map(|j| market.baseline[j].iter().sum::<f64>() / n_pts as f64)
        .collect();
    let ones = vec![1.0; n_edge];
    // The averaged draw can exceed what idle stations deliver; fall back to
    // the flat no-flow equilibrium and let the solver work off the residuals.
    let steady = steady_state_solve(net, &sigma_mean, &q_mean, &ones, &ones).unwrap_or_else(|_| {
        let level = sigma_mean.iter().sum::<f64>() / s as f64;
        SystemState {
            rho: vec![level; m_free],
            phi: vec![0.0; n_edge],
        }
    });
    let mut init = vec![0.0; n_vars];
    for k in 0..n_pts {
        let base = k * v_pt;
        init[base..base + m_free].copy_from_slice(&steady.rho);
        init[base + m_free..base + m_free + n_edge].copy_from_slice(&steady.phi);
        for ci in 0..n_comp {
            init[base + m_free + n_edge + ci] = 1.0;
        }
    }

    Ok(NlpProblem {
        net: net.clone(),
        inc,
        grid,
        market,
        baseline: baseline.clone(),
        opts,
        sigma,
        sigma_dot,
        sites,
        maop_sites,
        power_sites,
        edge_comp,
        lb,
        ub,
        init,
        pin: None,
    })
}

impl NlpProblem {
    fn v_per_point(&self) -> usize {
        self.inc.n_free + self.inc.n_edges() + self.sites.len() + self.market.n_transfers()
    }

    /// Variable slot of free-node density j at grid point k.
    pub fn density_index(&self, j: usize, k: usize) -> usize {
        k * self.v_per_point() + j
    }

    /// Variable slot of edge flux e at grid point k.
    pub fn flux_index(&self, e: usize, k: usize) -> usize {
        k * self.v_per_point() + self.inc.n_free + e
    }

    /// Variable slot of station ratio c at grid point k.
    pub fn ratio_index(&self, c: usize, k: usize) -> usize {
        k * self.v_per_point() + self.inc.n_free + self.inc.n_edges() + c
    }

    /// Variable slot of transfer quantity m at grid point k.
    pub fn quantity_index(&self, m: usize, k: usize) -> usize {
        k * self.v_per_point() + self.inc.n_free + self.inc.n_edges() + self.sites.len() + m
    }

    /// Equality rows per grid point (mass rows first, then momentum rows).
    fn eq_stride(&self) -> usize {
        self.inc.n_free + self.inc.n_edges()
    }

    fn ineq_stride(&self) -> usize {
        self.maop_sites.len() + self.power_sites.len()
    }

    pub fn n_points(&self) -> usize {
        self.grid.n()
    }

    pub fn n_free_nodes(&self) -> usize {
        self.inc.n_free
    }

    pub fn n_network_edges(&self) -> usize {
        self.inc.n_edges()
    }

    pub fn n_compressors(&self) -> usize {
        self.sites.len()
    }

    pub fn n_transfers(&self) -> usize {
        self.market.n_transfers()
    }

    pub fn grid(&self) -> &CollocationGrid {
        &self.grid
    }

    pub fn market(&self) -> &MarketData {
        &self.market
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn incidence(&self) -> &IncidenceMatrices {
        &self.inc
    }

    pub fn options(&self) -> &TranscribeOptions {
        &self.opts
    }

    /// Absolute profile hours behind each grid point.
    pub fn hours(&self) -> Vec<f64> {
        let sc = self.net.scaling.expect("dimensionless network");
        self.grid
            .points()
            .iter()
            .map(|t| sc.time_to_hours(*t) + self.opts.hour_offset)
            .collect()
    }

    /// Where the nodal balance rows sit in the equality stack.
    pub fn mass_row_map(&self) -> MassRowMap {
        MassRowMap {
            n_free: self.inc.n_free,
            n_points: self.grid.n(),
            stride: self.eq_stride(),
            offset: 0,
        }
    }

    pub fn pinned_state(&self) -> Option<&[f64]> {
        self.pin.as_deref()
    }

    /// Supply density series of one slack node.
    pub fn supply_series(&self, i: usize) -> Vec<f64> {
        self.sigma.iter().map(|row| row[i]).collect()
    }

    pub fn density_series(&self, x: &[f64], j: usize) -> Vec<f64> {
        (0..self.grid.n()).map(|k| x[self.density_index(j, k)]).collect()
    }

    pub fn flux_series(&self, x: &[f64], e: usize) -> Vec<f64> {
        (0..self.grid.n()).map(|k| x[self.flux_index(e, k)]).collect()
    }

    pub fn ratio_series(&self, x: &[f64], c: usize) -> Vec<f64> {
        (0..self.grid.n()).map(|k| x[self.ratio_index(c, k)]).collect()
    }

    pub fn quantity_series(&self, x: &[f64], m: usize) -> Vec<f64> {
        (0..self.grid.n()).map(|k| x[self.quantity_index(m, k)]).collect()
    }

    /// Free densities and edge fluxes at grid point k.
    pub fn point_state(&self, x: &[f64], k: usize) -> SystemState {
        let m = self.inc.n_free;
        let e = self.inc.n_edges();
        SystemState {
            rho: x[self.density_index(0, k)..self.density_index(0, k) + m].to_vec(),
            phi: x[self.flux_index(0, k)..self.flux_index(0, k) + e].to_vec(),
        }
    }

    /// Boost ratios per compressor at grid point k.
    pub fn ratios_at(&self, x: &[f64], k: usize) -> Vec<f64> {
        (0..self.sites.len()).map(|c| x[self.ratio_index(c, k)]).collect()
    }

    /// Composed withdrawals (baseline plus cleared deviations) at point k.
    pub fn withdrawals_at(&self, x: &[f64], k: usize) -> Vec<f64> {
        let s = self.inc.n_slack;
        let mut q: Vec<f64> = (0..self.inc.n_free).map(|j| self.market.baseline[j][k]).collect();
        for (m, t) in self.market.transfers.iter().enumerate() {
            q[t.node - s] += role_sign(t.role) * x[self.quantity_index(m, k)];
        }
        q
    }

    pub fn schedule(&self, x: &[f64]) -> TransferSchedule {
        TransferSchedule {
            quantities: (0..self.market.n_transfers())
                .map(|m| self.quantity_series(x, m))
                .collect(),
        }
    }

    /// Bid surplus of a decision vector (the negated objective).
    pub fn surplus(&self, x: &[f64]) -> f64 {
        self.market.surplus(&self.schedule(x), &self.grid)
    }

    /// Boost ratios expanded to per-edge tail/head factors at point k.
    fn ratio_vectors(&self, x: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
        let e = self.inc.n_edges();
        let mut tail = vec![1.0; e];
        let mut head = vec![1.0; e];
        let alphas = self.ratios_at(x, k);
        self.net.fill_edge_ratios(&alphas, &mut tail, &mut head);
        (tail, head)
    }

    /// Full density vector [σ; ρ] at point k.
    fn varrho(&self, x: &[f64], k: usize) -> Vec<f64> {
        let m = self.inc.n_free;
        let mut out = Vec::with_capacity(self.inc.n_nodes());
        out.extend_from_slice(&self.sigma[k]);
        out.extend_from_slice(&x[self.density_index(0, k)..self.density_index(0, k) + m]);
        out
    }

    /// Density of one node (supply value or decision variable) at point k.
    fn varrho_one(&self, x: &[f64], node: usize, k: usize) -> f64 {
        let s = self.inc.n_slack;
        if node < s {
            self.sigma[k][node]
        } else {
            x[self.density_index(node - s, k)]
        }
    }

    /// Density rate of one node under the circular stencil.
    fn varrho_dot_one(&self, x: &[f64], node: usize, k: usize) -> f64 {
        let s = self.inc.n_slack;
        if node < s {
            self.sigma_dot[k][node]
        } else {
            let kn = (k + 1) % self.grid.n();
            let j = node - s;
            (x[self.density_index(j, kn)] - x[self.density_index(j, k)]) * self.grid.diff().rate()
        }
    }

    fn varrho_dot(&self, x: &[f64], k: usize) -> Vec<f64> {
        (0..self.inc.n_nodes())
            .map(|node| self.varrho_dot_one(x, node, k))
            .collect()
    }

    /// Emits every equality-Jacobian entry as (row, col, value). The emission
    /// sequence depends only on static structure, so one walk defines the
    /// pattern and later walks fill aligned value slices.
    fn walk_eq_jacobian(&self, x: &[f64], mut emit: impl FnMut(usize, usize, f64)) {
        let s = self.inc.n_slack;
        let m_free = self.inc.n_free;
        let stride = self.eq_stride();
        let rate = self.grid.diff().rate();
        let n_pts = self.grid.n();

        for k in 0..n_pts {
            let kn = (k + 1) % n_pts;
            let row0 = k * stride;

            // Mass rows: cleared transfers enter the withdrawal with ±4.
            for (m, t) in self.market.transfers.iter().enumerate() {
                emit(row0 + t.node - s, self.quantity_index(m, k), 4.0 * role_sign(t.role));
            }
            for (e, &(u, v)) in self.inc.ends.iter().enumerate() {
                let xl = self.inc.area[e] * self.inc.lambda[e];
                let x4 = 4.0 * self.inc.area[e];
                if u >= s {
                    emit(row0 + u - s, self.flux_index(e, k), x4);
                }
                if v >= s {
                    emit(row0 + v - s, self.flux_index(e, k), -x4);
                }
                // Storage XΛ(α̲ϱ̇_u + ᾱϱ̇_v) enters both free endpoint rows.
                let (tc, hc) = self.edge_comp[e];
                let a_tail = tc.map_or(1.0, |c| x[self.ratio_index(c, k)]);
                let a_head = hc.map_or(1.0, |c| x[self.ratio_index(c, k)]);
                for (end, ratio) in [(u, a_tail), (v, a_head)] {
                    if end < s {
                        continue;
                    }
                    let col_now = self.density_index(end - s, k);
                    let col_next = self.density_index(end - s, kn);
                    for target in [u, v] {
                        if target < s {
                            continue;
                        }
                        let row = row0 + target - s;
                        emit(row, col_now, -rate * xl * ratio);
                        emit(row, col_next, rate * xl * ratio);
                    }
                }
                for (comp, end) in [(tc, u), (hc, v)] {
                    let Some(c) = comp else { continue };
                    let dot = self.varrho_dot_one(x, end, k);
                    for target in [u, v] {
                        if target < s {
                            continue;
                        }
                        emit(row0 + target - s, self.ratio_index(c, k), xl * dot);
                    }
                }
            }

            // Momentum rows.
            for (e, &(u, v)) in self.inc.ends.iter().enumerate() {
                let row = row0 + m_free + e;
                let lk = self.inc.lambda[e] * self.inc.kappa[e];
                let phi = x[self.flux_index(e, k)];
                emit(row, self.flux_index(e, k), lk * signed_square_d1(phi, self.opts.smoothing));
                let (tc, hc) = self.edge_comp[e];
                let a_tail = tc.map_or(1.0, |c| x[self.ratio_index(c, k)]);
                let a_head = hc.map_or(1.0, |c| x[self.ratio_index(c, k)]);
                let rho_u = self.varrho_one(x, u, k);
                let rho_v = self.varrho_one(x, v, k);
                if u >= s {
                    emit(row, self.density_index(u - s, k), -2.0 * a_tail * a_tail * rho_u);
                }
                if v >= s {
                    emit(row, self.density_index(v - s, k), 2.0 * a_head * a_head * rho_v);
                }
                if let Some(c) = tc {
                    emit(row, self.ratio_index(c, k), -2.0 * a_tail * rho_u * rho_u);
                }
                if let Some(c) = hc {
                    emit(row, self.ratio_index(c, k), 2.0 * a_head * rho_v * rho_v);
                }
            }
        }

        if self.pin.is_some() {
            let base = n_pts * stride;
            for j in 0..m_free {
                emit(base + j, self.density_index(j, 0), 1.0);
            }
        }
    }

    /// Inequality-Jacobian walker; same alignment contract as the equality
    /// walker.
    fn walk_ineq_jacobian(&self, x: &[f64], mut emit: impl FnMut(usize, usize, f64)) {
        let stride = self.ineq_stride();
        let delta = self.opts.smoothing;
        for k in 0..self.grid.n() {
            let row0 = k * stride;
            for (t, &ci) in self.maop_sites.iter().enumerate() {
                let site = &self.sites[ci];
                let jf = site.free_end.expect("maop site boosts a free node");
                let alpha = x[self.ratio_index(ci, k)];
                let rho = x[self.density_index(jf, k)];
                emit(row0 + t, self.ratio_index(ci, k), -rho);
                emit(row0 + t, self.density_index(jf, k), -alpha);
            }
            let base = row0 + self.maop_sites.len();
            for (t, &ci) in self.power_sites.iter().enumerate() {
                let site = &self.sites[ci];
                let coef = site.power_coef.expect("power site has a limit");
                let h = site.exponent;
                let alpha = x[self.ratio_index(ci, k)];
                let phi = x[self.flux_index(site.edge, k)];
                let boost = alpha.powf(h) - 1.0;
                emit(
                    base + t,
                    self.flux_index(site.edge, k),
                    -coef * smooth_abs_d1(phi, delta) * boost,
                );
                emit(
                    base + t,
                    self.ratio_index(ci, k),
                    -coef * smooth_abs(phi, delta) * h * alpha.powf(h - 1.0),
                );
            }
        }
    }

    /// Walker for ∇²(f − λᵀc_E − νᵀc_I), lower triangle, duplicates summed.
    fn walk_hessian(
        &self,
        x: &[f64],
        lam_eq: &[f64],
        lam_ineq: &[f64],
        mut emit: impl FnMut(usize, usize, f64),
    ) {
        let s = self.inc.n_slack;
        let m_free = self.inc.n_free;
        let stride = self.eq_stride();
        let stride_i = self.ineq_stride();
        let rate = self.grid.diff().rate();
        let delta = self.opts.smoothing;
        let n_pts = self.grid.n();
        let mut lo = |r: usize, c: usize, v: f64| {
            if r >= c {
                emit(r, c, v);
            } else {
                emit(c, r, v);
            }
        };

        for k in 0..n_pts {
            let kn = (k + 1) % n_pts;
            let row0 = k * stride;

            // Mass rows are bilinear in (α, ρ_end) through the storage term
            // whenever a station boosts a free node.
            for (ci, site) in self.sites.iter().enumerate() {
                let Some(jf) = site.free_end else { continue };
                let e = site.edge;
                let (u, v) = self.inc.ends[e];
                let xl = self.inc.area[e] * self.inc.lambda[e];
                let mut lam_sum = 0.0;
                if u >= s {
                    lam_sum += lam_eq[row0 + u - s];
                }
                if v >= s {
                    lam_sum += lam_eq[row0 + v - s];
                }
                let a_col = self.ratio_index(ci, k);
                lo(a_col, self.density_index(jf, k), lam_sum * xl * rate);
                lo(a_col, self.density_index(jf, kn), -lam_sum * xl * rate);
            }

            // Momentum rows.
            for (e, &(u, v)) in self.inc.ends.iter().enumerate() {
                let lam = lam_eq[row0 + m_free + e];
                let lk = self.inc.lambda[e] * self.inc.kappa[e];
                let phi = x[self.flux_index(e, k)];
                lo(
                    self.flux_index(e, k),
                    self.flux_index(e, k),
                    -lam * lk * signed_square_d2(phi, delta),
                );
                let (tc, hc) = self.edge_comp[e];
                let a_tail = tc.map_or(1.0, |c| x[self.ratio_index(c, k)]);
                let a_head = hc.map_or(1.0, |c| x[self.ratio_index(c, k)]);
                let rho_u = self.varrho_one(x, u, k);
                let rho_v = self.varrho_one(x, v, k);
                if u >= s {
                    let col = self.density_index(u - s, k);
                    lo(col, col, 2.0 * lam * a_tail * a_tail);
                }
                if v >= s {
                    let col = self.density_index(v - s, k);
                    lo(col, col, -2.0 * lam * a_head * a_head);
                }
                if let Some(c) = tc {
                    let a_col = self.ratio_index(c, k);
                    lo(a_col, a_col, 2.0 * lam * rho_u * rho_u);
                    if u >= s {
                        lo(a_col, self.density_index(u - s, k), 4.0 * lam * a_tail * rho_u);
                    }
                }
                if let Some(c) = hc {
                    let a_col = self.ratio_index(c, k);
                    lo(a_col, a_col, -2.0 * lam * rho_v * rho_v);
                    if v >= s {
                        lo(a_col, self.density_index(v - s, k), -4.0 * lam * a_head * rho_v);
                    }
                }
            }

            // Pressure-cap rows: c = cap − αρ, so ∂²c/∂α∂ρ = −1.
            let rowi0 = k * stride_i;
            for (t, &ci) in self.maop_sites.iter().enumerate() {
                let nu = lam_ineq[rowi0 + t];
                let jf = self.sites[ci].free_end.expect("maop site");
                lo(self.ratio_index(ci, k), self.density_index(jf, k), nu);
            }
            // Power rows: c = 1 − coef·|Φ|·(α^h − 1).
            let basei = rowi0 + self.maop_sites.len();
            for (t, &ci) in self.power_sites.iter().enumerate() {
                let nu = lam_ineq[basei + t];
                let site = &self.sites[ci];
                let coef = site.power_coef.expect("power site");
                let h = site.exponent;
                let alpha = x[self.ratio_index(ci, k)];
                let phi = x[self.flux_index(site.edge, k)];
                let a_col = self.ratio_index(ci, k);
                let p_col = self.flux_index(site.edge, k);
                lo(
                    p_col,
                    p_col,
                    nu * coef * smooth_abs_d2(phi, delta) * (alpha.powf(h) - 1.0),
                );
                lo(
                    a_col,
                    p_col,
                    nu * coef * smooth_abs_d1(phi, delta) * h * alpha.powf(h - 1.0),
                );
                lo(
                    a_col,
                    a_col,
                    nu * coef * smooth_abs(phi, delta) * h * (h - 1.0) * alpha.powf(h - 2.0),
                );
            }
        }
    }

    /// Re-anchors the horizon `shift_hours` later: profiles advance by the
    /// shift, the previous trajectory (circularly interpolated) becomes the
    /// warm start, and the first grid point's free densities are pinned to
    /// the previous solution's state at the shift time. Fluxes are algebraic
    /// and stay free.
    pub fn mpc_step(&self, prev_x: &[f64], shift_hours: f64) -> Result<NlpProblem> {
        if prev_x.len() != self.n_vars() {
            return Err(Error::DimensionMismatch(format!(
                "previous solution has {} variables, this horizon needs {}",
                prev_x.len(),
                self.n_vars()
            )));
        }
        let sc = self.net.scaling.expect("dimensionless network");
        let horizon_hours = sc.time_to_hours(self.grid.horizon());
        if !(0.0..horizon_hours).contains(&shift_hours) {
            return Err(Error::InvalidInput(format!(
                "rolling shift {shift_hours} h must lie in [0, {horizon_hours}) h",
            )));
        }
        let mut opts = self.opts;
        opts.hour_offset += shift_hours;
        let mut next = transcribe(
            &self.net,
            self.market.transfers.clone(),
            &self.baseline,
            self.grid,
            opts,
        )?;

        // One circular series per time-major variable slot.
        let v_pt = self.v_per_point();
        let n_pts = self.grid.n();
        let series: Vec<Vec<f64>> = (0..v_pt)
            .map(|v| (0..n_pts).map(|k| prev_x[k * v_pt + v]).collect())
            .collect();
        let t_shift = self.grid.wrap(sc.hours_to_time(shift_hours));
        let mut init = vec![0.0; self.n_vars()];
        for k in 0..n_pts {
            let t = self.grid.wrap(self.grid.point(k) + t_shift);
            for (v, sv) in series.iter().enumerate() {
                init[k * v_pt + v] = self.grid.interpolate(sv, t)?;
            }
        }
        let pin = (0..self.inc.n_free)
            .map(|j| self.grid.interpolate(&series[j], t_shift))
            .collect::<Result<Vec<f64>>>()?;
        next.init = init;
        next.pin = Some(pin);
        Ok(next)
    }
}

impl NlpModel for NlpProblem {
    fn n_vars(&self) -> usize {
        self.v_per_point() * self.grid.n()
    }

    fn n_eq(&self) -> usize {
        self.eq_stride() * self.grid.n() + if self.pin.is_some() { self.inc.n_free } else { 0 }
    }

    fn n_ineq(&self) -> usize {
        self.ineq_stride() * self.grid.n()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lb.clone(), self.ub.clone())
    }

    fn initial_point(&self) -> Vec<f64> {
        self.init.clone()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        -self.surplus(x)
    }

    fn gradient(&self, _x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let w = self.grid.weight();
        for (m, t) in self.market.transfers.iter().enumerate() {
            let sign = role_sign(t.role);
            for k in 0..self.grid.n() {
                grad[self.quantity_index(m, k)] = -sign * self.market.price[m][k] * w;
            }
        }
    }

    fn eq_constraints(&self, x: &[f64], out: &mut [f64]) {
        let m_free = self.inc.n_free;
        let n_edge = self.inc.n_edges();
        let stride = self.eq_stride();
        let n_pts = self.grid.n();
        for k in 0..n_pts {
            let (tail, head) = self.ratio_vectors(x, k);
            let varrho = self.varrho(x, k);
            let varrho_dot = self.varrho_dot(x, k);
            let q = self.withdrawals_at(x, k);
            let phi = &x[self.flux_index(0, k)..self.flux_index(0, k) + n_edge];
            let (mass, mom) = out[k * stride..(k + 1) * stride].split_at_mut(m_free);
            mass_residual(&self.inc, &varrho_dot, phi, &q, &tail, &head, mass);
            momentum_residual(&self.inc, &varrho, phi, &tail, &head, self.opts.smoothing, mom);
        }
        if let Some(pin) = &self.pin {
            let base = n_pts * stride;
            for j in 0..m_free {
                out[base + j] = x[self.density_index(j, 0)] - pin[j];
            }
        }
    }

    fn ineq_constraints(&self, x: &[f64], out: &mut [f64]) {
        let stride = self.ineq_stride();
        let delta = self.opts.smoothing;
        for k in 0..self.grid.n() {
            let row0 = k * stride;
            for (t, &ci) in self.maop_sites.iter().enumerate() {
                let site = &self.sites[ci];
                let jf = site.free_end.expect("maop site");
                out[row0 + t] = self.net.pipes[site.edge].density_max
                    - x[self.ratio_index(ci, k)] * x[self.density_index(jf, k)];
            }
            let base = row0 + self.maop_sites.len();
            for (t, &ci) in self.power_sites.iter().enumerate() {
                let site = &self.sites[ci];
                let coef = site.power_coef.expect("power site");
                let alpha = x[self.ratio_index(ci, k)];
                let phi = x[self.flux_index(site.edge, k)];
                out[base + t] = 1.0
                    - coef * smooth_abs(phi, delta) * (alpha.powf(site.exponent) - 1.0);
            }
        }
    }

    fn eq_jacobian_pattern(&self) -> Pattern {
        let mut p = Pattern::default();
        self.walk_eq_jacobian(&self.init, |r, c, _| p.push(r, c));
        p
    }

    fn ineq_jacobian_pattern(&self) -> Pattern {
        let mut p = Pattern::default();
        self.walk_ineq_jacobian(&self.init, |r, c, _| p.push(r, c));
        p
    }

    fn jacobian_values(&self, x: &[f64], eq_vals: &mut [f64], ineq_vals: &mut [f64]) {
        let mut t = 0;
        self.walk_eq_jacobian(x, |_, _, v| {
            eq_vals[t] = v;
            t += 1;
        });
        let mut t = 0;
        self.walk_ineq_jacobian(x, |_, _, v| {
            ineq_vals[t] = v;
            t += 1;
        });
    }

    fn hessian_pattern(&self) -> Pattern {
        let mut p = Pattern::default();
        let lam_eq = vec![0.0; self.n_eq()];
        let lam_ineq = vec![0.0; self.n_ineq()];
        self.walk_hessian(&self.init, &lam_eq, &lam_ineq, |r, c, _| p.push(r, c));
        p
    }

    fn hessian_values(&self, x: &[f64], lam_eq: &[f64], lam_ineq: &[f64], vals: &mut [f64]) {
        let mut t = 0;
        self.walk_hessian(x, lam_eq, lam_ineq, |_, _, v| {
            vals[t] = v;
            t += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{CompressorSpec, GasProperties, Node, PipeSpec, Scaling};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn gas() -> GasProperties {
        GasProperties {
            sound_speed: 377.0,
            compressibility: 0.9,
            gas_constant: 518.0,
            temperature: 288.0,
        }
    }

    fn sc() -> Scaling {
        Scaling::new(5000.0, 45.0, 377.0).unwrap()
    }

    fn si_node(id: &str) -> Node {
        Node {
            id: id.into(),
            density_min: 10.0,
            density_max: 130.0,
            slack_density: None,
        }
    }

    fn si_slack(id: &str, p: Profile) -> Node {
        Node {
            slack_density: Some(p),
            ..si_node(id)
        }
    }

    fn pipe(id: &str, from: &str, to: &str, km: f64) -> PipeSpec {
        PipeSpec {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length: km * 1e3,
            diameter: 0.5,
            friction: 0.01,
            area: None,
            density_max: 120.0,
        }
    }

    fn compressor(id: &str, edge: &str, power_mw: f64) -> CompressorSpec {
        CompressorSpec {
            id: id.into(),
            edge: edge.into(),
            at_outlet: false,
            ratio_max: 1.4,
            power_max: power_mw * 1e6,
            gamma: 1.4,
            adiabatic_eff: 0.85,
            mechanical_eff: 0.98,
            gravity: 0.6,
            discharge_temp: 288.0,
        }
    }

    /// Slack — pipe — free node, constant supply at the reference density.
    fn single_pipe() -> Network {
        Network::assemble(
            gas(),
            Units::Si,
            vec![si_slack("s", Profile::Constant(45.0)), si_node("a")],
            vec![pipe("p0", "s", "a", 20.0)],
            vec![],
        )
        .unwrap()
        .nondimensionalize(sc())
        .unwrap()
    }

    /// Two pipes in series with a station at each tail: one boosting the
    /// supply node, one boosting a free node; time-varying supply density.
    fn boosted_chain() -> Network {
        Network::assemble(
            gas(),
            Units::Si,
            vec![
                si_slack("s", Profile::Hourly(vec![45.0, 47.25, 42.75])),
                si_node("a"),
                si_node("b"),
            ],
            vec![pipe("p0", "s", "a", 20.0), pipe("p1", "a", "b", 15.0)],
            vec![compressor("c0", "p0", 5.0), compressor("c1", "p1", 4.0)],
        )
        .unwrap()
        .nondimensionalize(sc())
        .unwrap()
    }

    fn hourly_grid(hours: usize) -> CollocationGrid {
        CollocationGrid::new(sc().hours_to_time(hours as f64), hours).unwrap()
    }

    fn buyer(node: usize, price: Profile, cap: f64) -> TransferNode {
        TransferNode {
            id: format!("b{node}"),
            node,
            role: Role::Buyer,
            price,
            qty_min: Profile::Constant(0.0),
            qty_max: Profile::Constant(cap),
        }
    }

    fn seller(node: usize, price: Profile, cap: f64) -> TransferNode {
        TransferNode {
            role: Role::Seller,
            ..buyer(node, price, cap)
        }
    }

    fn chain_transfers() -> Vec<TransferNode> {
        vec![
            buyer(2, Profile::Hourly(vec![6.0, 5.0, 7.0]), 0.01),
            seller(1, Profile::Constant(3.0), 0.01),
        ]
    }

    fn chain_problem() -> NlpProblem {
        let net = boosted_chain();
        let baseline = BaselineFlow {
            per_free: vec![Profile::Constant(0.002), Profile::Constant(0.006)],
        };
        transcribe(
            &net,
            chain_transfers(),
            &baseline,
            hourly_grid(3),
            TranscribeOptions::default(),
        )
        .unwrap()
    }

    /// A strictly interior, generic point: densities near 1, forward fluxes
    /// away from the smoothing kink, boosted ratios, partial clearing.
    fn generic_point(p: &NlpProblem, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; p.n_vars()];
        for k in 0..p.n_points() {
            for j in 0..p.n_free_nodes() {
                x[p.density_index(j, k)] = rng.gen_range(0.85..1.15);
            }
            for e in 0..p.n_network_edges() {
                x[p.flux_index(e, k)] = rng.gen_range(0.15..0.45);
            }
            for c in 0..p.n_compressors() {
                x[p.ratio_index(c, k)] = rng.gen_range(1.05..1.3);
            }
            for m in 0..p.n_transfers() {
                x[p.quantity_index(m, k)] = rng.gen_range(0.001..0.009);
            }
        }
        x
    }

    fn dense(pat: &Pattern, vals: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; cols]; rows];
        for (t, (&r, &c)) in pat.rows.iter().zip(&pat.cols).enumerate() {
            d[r][c] += vals[t];
        }
        d
    }

    #[test]
    fn single_pipe_dimensions_and_row_map() {
        let net = single_pipe();
        let baseline = BaselineFlow {
            per_free: vec![Profile::Constant(0.008)],
        };
        let p = transcribe(
            &net,
            vec![],
            &baseline,
            hourly_grid(4),
            TranscribeOptions::default(),
        )
        .unwrap();
        // One mass and one momentum row at each of 4 points; no stations.
        assert_eq!(p.n_eq(), 8);
        assert_eq!(p.n_ineq(), 0);
        assert_eq!(p.n_vars(), 8);
        let rows = p.mass_row_map();
        assert_eq!(rows.stride, 2);
        for k in 0..4 {
            assert_eq!(rows.row(0, k), 2 * k);
        }
        let (lb, ub) = p.bounds();
        // Density window: node min, then min(node cap, pipe cap) = 120/45.
        assert_relative_eq!(lb[p.density_index(0, 0)], 10.0 / 45.0);
        assert_relative_eq!(ub[p.density_index(0, 0)], 120.0 / 45.0);
        assert_eq!(lb[p.flux_index(0, 2)], f64::NEG_INFINITY);
        assert_eq!(ub[p.flux_index(0, 2)], f64::INFINITY);
    }

    #[test]
    fn replicated_steady_state_zeroes_the_dynamic_rows() {
        let net = boosted_chain();
        let baseline = BaselineFlow {
            per_free: vec![Profile::Constant(0.002), Profile::Constant(0.006)],
        };
        // Constant supply so the horizon average is the pointwise value, and
        // the smoothing matched to the steady reference solve.
        let mut net = net;
        net.nodes[0].slack_density = Some(Profile::Constant(1.0));
        let p = transcribe(
            &net,
            vec![],
            &baseline,
            hourly_grid(3),
            TranscribeOptions {
                smoothing: 1e-9,
                ..TranscribeOptions::default()
            },
        )
        .unwrap();
        let x = p.initial_point();
        let mut r = vec![f64::NAN; p.n_eq()];
        p.eq_constraints(&x, &mut r);
        let worst = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst < 1e-10, "replicated steady residual {worst}");
        // No transfers: the initial objective is exactly zero.
        assert_eq!(p.objective(&x), 0.0);
    }

    #[test]
    fn objective_matches_negated_surplus_and_gradient_is_exact() {
        let p = chain_problem();
        let x = generic_point(&p, 11);
        assert_relative_eq!(p.objective(&x), -p.surplus(&x), max_relative = 1e-14);

        let mut g = vec![f64::NAN; p.n_vars()];
        p.gradient(&x, &mut g);
        let h = 1e-6;
        let mut xp = x.clone();
        for i in 0..p.n_vars() {
            xp[i] = x[i] + h;
            let up = p.objective(&xp);
            xp[i] = x[i] - h;
            let dn = p.objective(&xp);
            xp[i] = x[i];
            assert_relative_eq!(g[i], (up - dn) / (2.0 * h), epsilon = 1e-8, max_relative = 1e-6);
        }
        // The buyer's first-hour entry carries −price·w.
        let w = p.grid().weight();
        assert_relative_eq!(g[p.quantity_index(0, 0)], -6.0 * w, max_relative = 1e-12);
        assert_relative_eq!(g[p.quantity_index(1, 0)], 3.0 * w, max_relative = 1e-12);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let p = chain_problem();
        let x = generic_point(&p, 23);
        let (n, me, mi) = (p.n_vars(), p.n_eq(), p.n_ineq());
        assert!(mi > 0, "fixture must exercise inequality rows");

        let pe = p.eq_jacobian_pattern();
        let pi = p.ineq_jacobian_pattern();
        let mut ve = vec![0.0; pe.len()];
        let mut vi = vec![0.0; pi.len()];
        p.jacobian_values(&x, &mut ve, &mut vi);
        let je = dense(&pe, &ve, me, n);
        let ji = dense(&pi, &vi, mi, n);

        let h = 1e-6;
        let mut xp = x.clone();
        let (mut ce_up, mut ce_dn) = (vec![0.0; me], vec![0.0; me]);
        let (mut ci_up, mut ci_dn) = (vec![0.0; mi], vec![0.0; mi]);
        for i in 0..n {
            xp[i] = x[i] + h;
            p.eq_constraints(&xp, &mut ce_up);
            p.ineq_constraints(&xp, &mut ci_up);
            xp[i] = x[i] - h;
            p.eq_constraints(&xp, &mut ce_dn);
            p.ineq_constraints(&xp, &mut ci_dn);
            xp[i] = x[i];
            for r in 0..me {
                let fd = (ce_up[r] - ce_dn[r]) / (2.0 * h);
                assert_relative_eq!(je[r][i], fd, epsilon = 1e-7, max_relative = 1e-5);
            }
            for r in 0..mi {
                let fd = (ci_up[r] - ci_dn[r]) / (2.0 * h);
                assert_relative_eq!(ji[r][i], fd, epsilon = 1e-7, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn hessian_matches_differentiated_lagrangian_gradient() {
        let p = chain_problem();
        let x = generic_point(&p, 31);
        let (n, me, mi) = (p.n_vars(), p.n_eq(), p.n_ineq());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lam_eq: Vec<f64> = (0..me).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lam_ineq: Vec<f64> = (0..mi).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let ph = p.hessian_pattern();
        let mut vh = vec![0.0; ph.len()];
        p.hessian_values(&x, &lam_eq, &lam_ineq, &mut vh);
        let mut hess = vec![vec![0.0; n]; n];
        for (t, (&r, &c)) in ph.rows.iter().zip(&ph.cols).enumerate() {
            assert!(r >= c, "hessian entry ({r},{c}) above the diagonal");
            hess[r][c] += vh[t];
            if r != c {
                hess[c][r] += vh[t];
            }
        }

        let pe = p.eq_jacobian_pattern();
        let pi = p.ineq_jacobian_pattern();
        let grad_l = |x: &[f64]| -> Vec<f64> {
            let mut g = vec![0.0; n];
            p.gradient(x, &mut g);
            let mut ve = vec![0.0; pe.len()];
            let mut vi = vec![0.0; pi.len()];
            p.jacobian_values(x, &mut ve, &mut vi);
            for (t, (&r, &c)) in pe.rows.iter().zip(&pe.cols).enumerate() {
                g[c] -= lam_eq[r] * ve[t];
            }
            for (t, (&r, &c)) in pi.rows.iter().zip(&pi.cols).enumerate() {
                g[c] -= lam_ineq[r] * vi[t];
            }
            g
        };

        let h = 1e-6;
        let mut xp = x.clone();
        for i in 0..n {
            xp[i] = x[i] + h;
            let up = grad_l(&xp);
            xp[i] = x[i] - h;
            let dn = grad_l(&xp);
            xp[i] = x[i];
            for r in 0..n {
                let fd = (up[r] - dn[r]) / (2.0 * h);
                assert_relative_eq!(hess[r][i], fd, epsilon = 1e-5, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn every_pattern_slot_is_structurally_live() {
        // Evaluating at a few generic points must light up every emitted
        // entry; a slot that stays zero would be a wasted (or wrong) entry.
        let p = chain_problem();
        let points: Vec<Vec<f64>> = (0..3).map(|s| generic_point(&p, 100 + s)).collect();

        let pe = p.eq_jacobian_pattern();
        let pi = p.ineq_jacobian_pattern();
        let mut max_e = vec![0.0f64; pe.len()];
        let mut max_i = vec![0.0f64; pi.len()];
        for x in &points {
            let mut ve = vec![0.0; pe.len()];
            let mut vi = vec![0.0; pi.len()];
            p.jacobian_values(x, &mut ve, &mut vi);
            for (m, v) in max_e.iter_mut().zip(&ve) {
                *m = m.max(v.abs());
            }
            for (m, v) in max_i.iter_mut().zip(&vi) {
                *m = m.max(v.abs());
            }
        }
        assert!(max_e.iter().all(|m| *m > 0.0));
        assert!(max_i.iter().all(|m| *m > 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lam_eq: Vec<f64> = (0..p.n_eq()).map(|_| rng.gen_range(0.5..1.5)).collect();
        let lam_ineq: Vec<f64> = (0..p.n_ineq()).map(|_| rng.gen_range(0.5..1.5)).collect();
        let ph = p.hessian_pattern();
        let mut max_h = vec![0.0f64; ph.len()];
        for x in &points {
            let mut vh = vec![0.0; ph.len()];
            p.hessian_values(x, &lam_eq, &lam_ineq, &mut vh);
            for (m, v) in max_h.iter_mut().zip(&vh) {
                *m = m.max(v.abs());
            }
        }
        assert!(max_h.iter().all(|m| *m > 0.0));
    }

    #[test]
    fn horizon_extension_ramps_end_back_to_start() {
        let ext = HorizonData::new(4.0, 2.0).unwrap();
        let p = Profile::Hourly(vec![1.0, 2.0, 2.0, 3.0]);
        // Inside the data horizon the profile is untouched.
        assert_eq!(ext.sample(&p, 0.0), 1.0);
        assert_eq!(ext.sample(&p, 3.5), 3.0);
        // Halfway up the ramp: mean of the end and start values.
        assert_relative_eq!(ext.sample(&p, 5.0), 2.0);
        // The ramp closes exactly onto the start, and lookups wrap.
        assert_relative_eq!(ext.sample(&p, 6.0), 1.0);
        assert_relative_eq!(ext.sample(&p, 6.5), ext.sample(&p, 0.5));

        // Already-periodic data stays constant across the ramp.
        let flat = Profile::Hourly(vec![2.0, 2.0]);
        let ext2 = HorizonData::new(2.0, 1.0).unwrap();
        for t in [2.0, 2.3, 2.9] {
            assert_eq!(ext2.sample(&flat, t), 2.0);
        }

        // Randomized ramp points satisfy the linear blend exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta: f64 = rng.gen_range(0.0..1.0);
            let got = ext.sample(&p, 4.0 + 2.0 * theta);
            assert_relative_eq!(got, 3.0 + (1.0 - 3.0) * theta, epsilon = 1e-12);
        }

        assert!(HorizonData::new(4.0, 0.0).is_err());
        assert!(HorizonData::new(4.0, -1.0).is_err());
        assert!(HorizonData::new(0.0, 1.0).is_err());
    }

    #[test]
    fn rolling_step_pins_first_point_to_previous_trajectory() {
        let p = chain_problem();
        let x = generic_point(&p, 77);
        let next = p.mpc_step(&x, 0.0).unwrap();
        assert_eq!(next.n_eq(), p.n_eq() + p.n_free_nodes());
        assert_eq!(next.n_vars(), p.n_vars());
        // Zero shift: warm start is the previous trajectory (up to rounding
        // in the circular interpolation) and the pin rows vanish there.
        for (a, b) in next.initial_point().iter().zip(&x) {
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
        let mut r = vec![f64::NAN; next.n_eq()];
        next.eq_constraints(&x, &mut r);
        for j in 0..p.n_free_nodes() {
            assert!(r[p.n_eq() + j].abs() < 1e-15);
        }
        // Dynamic rows are unchanged by the pinning.
        let mut r0 = vec![f64::NAN; p.n_eq()];
        p.eq_constraints(&x, &mut r0);
        assert_eq!(&r[..p.n_eq()], &r0[..]);

        // A one-hour shift pins the interpolated state and advances lookups.
        let next = p.mpc_step(&x, 1.0).unwrap();
        let pin = next.pinned_state().unwrap();
        for j in 0..p.n_free_nodes() {
            assert_relative_eq!(pin[j], x[p.density_index(j, 1)], epsilon = 1e-12);
        }
        assert_relative_eq!(next.hours()[0], 1.0, epsilon = 1e-12);
        // The buyer's hourly curve shifts with the horizon.
        assert_relative_eq!(next.market().price[0][0], 5.0);

        assert!(p.mpc_step(&x[..3], 0.0).is_err());
        assert!(p.mpc_step(&x, 3.0).is_err());
        assert!(p.mpc_step(&x, -0.5).is_err());
    }

    #[test]
    fn withdrawal_perturbations_localize_to_one_mass_row() {
        let net = boosted_chain();
        let grid = hourly_grid(3);
        let mk = |bump: f64| {
            let mut series = vec![0.004; 3];
            series[2] += bump;
            let baseline = BaselineFlow {
                per_free: vec![Profile::Constant(0.002), Profile::Hourly(series)],
            };
            transcribe(&net, vec![], &baseline, grid, TranscribeOptions::default()).unwrap()
        };
        let base = mk(0.0);
        let bumped = mk(1e-3);
        let x = generic_point(&base, 41);
        let mut r0 = vec![0.0; base.n_eq()];
        let mut r1 = vec![0.0; bumped.n_eq()];
        base.eq_constraints(&x, &mut r0);
        bumped.eq_constraints(&x, &mut r1);
        let target = base.mass_row_map().row(1, 2);
        for r in 0..base.n_eq() {
            let d = r1[r] - r0[r];
            if r == target {
                assert_relative_eq!(d, 4e-3, max_relative = 1e-10);
            } else {
                assert_eq!(d, 0.0, "row {r} moved");
            }
        }
    }

    #[test]
    fn supply_and_cap_violations_are_rejected_at_assembly() {
        let baseline = BaselineFlow {
            per_free: vec![Profile::Constant(0.0)],
        };
        // Supply density outside the node window.
        let net = Network::assemble(
            gas(),
            Units::Si,
            vec![
                si_slack("s", Profile::Hourly(vec![45.0, 140.0, 45.0])),
                si_node("a"),
            ],
            vec![pipe("p0", "s", "a", 20.0)],
            vec![],
        )
        .unwrap()
        .nondimensionalize(sc())
        .unwrap();
        let err = transcribe(
            &net,
            vec![],
            &baseline,
            hourly_grid(3),
            TranscribeOptions::default(),
        );
        assert!(err.is_err());

        // Supply density above the cap of an uncompressed outgoing pipe.
        let mut tight = pipe("p0", "s", "a", 20.0);
        tight.density_max = 40.0;
        let net = Network::assemble(
            gas(),
            Units::Si,
            vec![si_slack("s", Profile::Constant(45.0)), si_node("a")],
            vec![tight.clone()],
            vec![],
        )
        .unwrap()
        .nondimensionalize(sc())
        .unwrap();
        assert!(transcribe(
            &net,
            vec![],
            &baseline,
            hourly_grid(3),
            TranscribeOptions::default()
        )
        .is_err());

        // Same pipe with a station at its tail: the cap becomes a per-point
        // ratio bound instead, and a ratio below 1 is impossible.
        let net = Network::assemble(
            gas(),
            Units::Si,
            vec![si_slack("s", Profile::Constant(45.0)), si_node("a")],
            vec![tight],
            vec![compressor("c0", "p0", 5.0)],
        )
        .unwrap()
        .nondimensionalize(sc())
        .unwrap();
        assert!(transcribe(
            &net,
            vec![],
            &baseline,
            hourly_grid(3),
            TranscribeOptions::default()
        )
        .is_err());

        // A free node whose lower bound exceeds every incident cap.
        let mut low_cap = pipe("p0", "s", "a", 20.0);
        low_cap.density_max = 8.0; // below the 10 kg/m³ node minimum
        let net = Network::assemble(
            gas(),
            Units::Si,
            vec![si_slack("s", Profile::Constant(7.0)), si_node("a")],
            vec![low_cap],
            vec![],
        )
        .unwrap()
        .nondimensionalize(sc())
        .unwrap();
        let err = transcribe(
            &net,
            vec![],
            &baseline,
            hourly_grid(3),
            TranscribeOptions::default(),
        );
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pipe_caps_fold_into_bounds_per_point() {
        // Station boosting the supply node of a tightly capped pipe: the
        // ratio roof follows cap/σ(t_k) point by point.
        let mut capped = pipe("p0", "s", "a", 20.0);
        capped.density_max = 54.0; // 1.2 in reference units
        let net = Network::assemble(
            gas(),
            Units::Si,
            vec![
                si_slack("s", Profile::Hourly(vec![45.0, 47.25, 42.75])),
                si_node("a"),
                si_node("b"),
            ],
            vec![capped, pipe("p1", "a", "b", 15.0)],
            vec![compressor("c0", "p0", 5.0)],
        )
        .unwrap()
        .nondimensionalize(sc())
        .unwrap();
        let baseline = BaselineFlow {
            per_free: vec![Profile::Constant(0.0), Profile::Constant(0.004)],
        };
        let p = transcribe(
            &net,
            vec![],
            &baseline,
            hourly_grid(3),
            TranscribeOptions::default(),
        )
        .unwrap();
        let (lb, ub) = p.bounds();
        let sigma = [1.0, 1.05, 0.95];
        for k in 0..3 {
            assert_eq!(lb[p.ratio_index(0, k)], 1.0);
            assert_relative_eq!(
                ub[p.ratio_index(0, k)],
                (1.2f64 / sigma[k]).min(1.4),
                max_relative = 1e-12
            );
        }
        // Node `a`: head of the capped pipe is uncompressed, so the 1.2 cap
        // folds into its density roof alongside p1's own 120/45.
        assert_relative_eq!(ub[p.density_index(0, 0)], 1.2, max_relative = 1e-12);
        assert_relative_eq!(ub[p.density_index(1, 0)], 120.0 / 45.0, max_relative = 1e-12);
    }

    #[test]
    fn hour_offset_shifts_every_profile_lookup() {
        let net = boosted_chain();
        let baseline = BaselineFlow {
            per_free: vec![Profile::Constant(0.002), Profile::Constant(0.006)],
        };
        let p = transcribe(
            &net,
            chain_transfers(),
            &baseline,
            hourly_grid(3),
            TranscribeOptions {
                hour_offset: 1.0,
                ..TranscribeOptions::default()
            },
        )
        .unwrap();
        // Hourly buyer curve [6,5,7] read from hour 1: 5, 7, then wrap to 6.
        assert_eq!(p.market().price[0], vec![5.0, 7.0, 6.0]);
        // Supply profile shifts identically.
        assert_relative_eq!(p.supply_series(0)[0], 1.05, max_relative = 1e-12);
        assert_relative_eq!(p.supply_series(0)[2], 1.0, max_relative = 1e-12);
    }
}
