//! Lumped pipe dynamics: mass and momentum residuals in incidence form,
//! compressor power, pressure slack diagnostics, boundary-flow recovery, and
//! the steady-state Newton solve.
//!
//! All evaluations are per collocation point and dimensionless. Density
//! vectors stack slack values first (`varrho = [σ; ρ]`, slack-first node
//! order); flux vectors are per edge. Withdrawals `q` are positive for gas
//! leaving the network at free nodes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{Compressor, IncidenceMatrices, Network, Units};

/// Densities at free nodes and average fluxes per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Smoothed signed square Φ·√(Φ²+δ²); the exact Φ|Φ| at δ = 0.
#[inline]
pub fn signed_square(phi: f64, delta: f64) -> f64 {
    phi * (phi * phi + delta * delta).sqrt()
}

/// d/dΦ of [`signed_square`]: (2Φ²+δ²)/√(Φ²+δ²); 2|Φ| at δ = 0.
#[inline]
pub fn signed_square_d1(phi: f64, delta: f64) -> f64 {
    let r2 = phi * phi + delta * delta;
    if r2 == 0.0 {
        return 0.0;
    }
    (2.0 * phi * phi + delta * delta) / r2.sqrt()
}

/// d²/dΦ² of [`signed_square`]: Φ(2Φ²+3δ²)/(Φ²+δ²)^{3/2}; 2·sign(Φ) at δ = 0.
#[inline]
pub fn signed_square_d2(phi: f64, delta: f64) -> f64 {
    let r2 = phi * phi + delta * delta;
    if r2 == 0.0 {
        return 0.0;
    }
    phi * (2.0 * phi * phi + 3.0 * delta * delta) / (r2 * r2.sqrt())
}

/// Smoothed magnitude √(Φ²+δ²); |Φ| at δ = 0, δ at Φ = 0.
#[inline]
pub fn smooth_abs(phi: f64, delta: f64) -> f64 {
    (phi * phi + delta * delta).sqrt()
}

/// d/dΦ of [`smooth_abs`]: Φ/√(Φ²+δ²).
#[inline]
pub fn smooth_abs_d1(phi: f64, delta: f64) -> f64 {
    let r = smooth_abs(phi, delta);
    if r == 0.0 {
        0.0
    } else {
        phi / r
    }
}

/// d²/dΦ² of [`smooth_abs`]: δ²/(Φ²+δ²)^{3/2}; 0 at δ = 0 away from the kink.
#[inline]
pub fn smooth_abs_d2(phi: f64, delta: f64) -> f64 {
    let r2 = phi * phi + delta * delta;
    if r2 == 0.0 {
        0.0
    } else {
        delta * delta / (r2 * r2.sqrt())
    }
}

/// Mass-balance residual at the free nodes:
/// `|A_q|XΛ|Bᵀ|ϱ̇ − 4(A_qXΦ − q)`, one entry per free node. Zero iff the
/// lumped continuity law holds. `varrho_dot` stacks slack and free density
/// rates; `tail`/`head` are per-edge boost ratios.
pub fn mass_residual(
    inc: &IncidenceMatrices,
    varrho_dot: &[f64],
    phi: &[f64],
    q: &[f64],
    tail: &[f64],
    head: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(varrho_dot.len(), inc.n_nodes());
    debug_assert_eq!(phi.len(), inc.n_edges());
    debug_assert_eq!(q.len(), inc.n_free);
    debug_assert_eq!(out.len(), inc.n_free);
    for (i, o) in out.iter_mut().enumerate() {
        *o = 4.0 * q[i];
    }
    let s = inc.n_slack;
    for (k, &(u, v)) in inc.ends.iter().enumerate() {
        let storage = inc.area[k]
            * inc.lambda[k]
            * (tail[k] * varrho_dot[u] + head[k] * varrho_dot[v]);
        let transport = 4.0 * inc.area[k] * phi[k];
        if u >= s {
            out[u - s] += storage + transport; // edge leaves u: A entry −1
        }
        if v >= s {
            out[v - s] += storage - transport;
        }
    }
}

/// Momentum residual per edge: `ΛK·Φ√(Φ²+δ²) + (Bᵀϱ)(|Bᵀ|ϱ)`, which expands
/// to `ΛK·Φ|Φ| − (ρ̲² − ρ̄²)` at δ = 0 with boosted endpoint densities
/// ρ̲ = α̲ϱ_u, ρ̄ = ᾱϱ_v. Zero iff the friction drop matches the squared
/// density difference along every edge.
pub fn momentum_residual(
    inc: &IncidenceMatrices,
    varrho: &[f64],
    phi: &[f64],
    tail: &[f64],
    head: &[f64],
    delta: f64,
    out: &mut [f64],
) {
    debug_assert_eq!(varrho.len(), inc.n_nodes());
    debug_assert_eq!(out.len(), inc.n_edges());
    for (k, &(u, v)) in inc.ends.iter().enumerate() {
        let lo = tail[k] * varrho[u];
        let hi = head[k] * varrho[v];
        out[k] = inc.lambda[k] * inc.kappa[k] * signed_square(phi[k], delta) + hi * hi - lo * lo;
    }
}

/// Shaft power drawn by a station: ε·|ṁ|·(α^h − 1) with ṁ in kg/s.
pub fn station_power(c: &Compressor, mdot: f64, alpha: f64) -> Result<f64> {
    if alpha < 1.0 {
        return Err(Error::InvalidInput(format!(
            "compression ratio {alpha} below 1"
        )));
    }
    Ok(c.energy_coeff() * mdot.abs() * (alpha.powf(c.exponent()) - 1.0))
}

/// Inequality slack stack for a full density vector: nonnegative everywhere
/// iff pressure limits hold. Blocks in order: per-edge tail MAOP
/// (ρ^max − α̲ϱ_u), per-edge head MAOP (ρ^max − ᾱϱ_v), per-node minimum
/// (ϱ_i − ρ_i^min), per-node cap (ρ_i^max − ϱ_i).
pub fn pressure_slacks(
    net: &Network,
    inc: &IncidenceMatrices,
    varrho: &[f64],
    tail: &[f64],
    head: &[f64],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * inc.n_edges() + 2 * inc.n_nodes());
    for (k, &(u, v)) in inc.ends.iter().enumerate() {
        out.push(net.pipes[k].density_max - tail[k] * varrho[u]);
        debug_assert_eq!((u, v), (net.pipes[k].from, net.pipes[k].to));
    }
    for (k, &(_, v)) in inc.ends.iter().enumerate() {
        out.push(net.pipes[k].density_max - head[k] * varrho[v]);
    }
    for (i, n) in net.nodes.iter().enumerate() {
        out.push(varrho[i] - n.density_min);
    }
    for (i, n) in net.nodes.iter().enumerate() {
        out.push(n.density_max - varrho[i]);
    }
    out
}

/// Recovers per-edge endpoint fluxes from the average flux and the storage
/// rate: the half-difference Φ₋ = −(Λ/4)·d(ρ̲+ρ̄)/dt, inlet Φ−Φ₋, outlet
/// Φ+Φ₋. Consistent with the assembled mass balance by construction.
pub fn boundary_flows(
    inc: &IncidenceMatrices,
    varrho_dot: &[f64],
    phi: &[f64],
    tail: &[f64],
    head: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut inlet = Vec::with_capacity(inc.n_edges());
    let mut outlet = Vec::with_capacity(inc.n_edges());
    for (k, &(u, v)) in inc.ends.iter().enumerate() {
        let half_diff =
            -0.25 * inc.lambda[k] * (tail[k] * varrho_dot[u] + head[k] * varrho_dot[v]);
        inlet.push(phi[k] - half_diff);
        outlet.push(phi[k] + half_diff);
    }
    (inlet, outlet)
}

/// Newton tolerance and iteration cap for the steady solve.
const STEADY_TOL: f64 = 1e-12;
const STEADY_MAX_ITER: usize = 60;
const STEADY_SMOOTHING: f64 = 1e-9;

/// Solves the steady algebraic system (zero density rates) for constant
/// supply densities `sigma` and withdrawals `q` under fixed boost ratios.
/// Residuals of the returned state are below 1e-10 in max-norm.
pub fn steady_state_solve(
    net: &Network,
    sigma: &[f64],
    q: &[f64],
    tail: &[f64],
    head: &[f64],
) -> Result<SystemState> {
    if net.units != Units::Nondim {
        return Err(Error::InvalidInput(
            "steady solve expects a dimensionless network".into(),
        ));
    }
    let inc = net.incidence()?;
    let (s, m, e) = (inc.n_slack, inc.n_free, inc.n_edges());
    if sigma.len() != s || q.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "expected {s} supply densities and {m} withdrawals, got {} and {}",
            sigma.len(),
            q.len()
        )));
    }

    // Flux warm start: least-squares mass balance A_q(XΦ) = q.
    let mut a_free = DMatrix::zeros(m, e);
    for (k, &(u, v)) in inc.ends.iter().enumerate() {
        if u >= s {
            a_free[(u - s, k)] = -inc.area[k];
        }
        if v >= s {
            a_free[(v - s, k)] = inc.area[k];
        }
    }
    let rhs = DVector::from_column_slice(q);
    let phi0 = a_free
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|msg| Error::LinearSolve(msg.into()))?;

    let sigma_mean = sigma.iter().sum::<f64>() / s as f64;
    let mut state = SystemState {
        rho: vec![sigma_mean; m],
        phi: phi0.iter().copied().collect(),
    };

    let mut varrho = vec![0.0; s + m];
    varrho[..s].copy_from_slice(sigma);
    let zero_rates = vec![0.0; s + m];

    let eval = |st: &SystemState, varrho: &mut [f64], r: &mut [f64]| {
        varrho[s..].copy_from_slice(&st.rho);
        let (rm, re) = r.split_at_mut(m);
        mass_residual(&inc, &zero_rates, &st.phi, q, tail, head, rm);
        // Negate: residual convention is LHS − RHS and the LHS vanishes here.
        for v in rm.iter_mut() {
            *v = -*v;
        }
        momentum_residual(&inc, varrho, &st.phi, tail, head, STEADY_SMOOTHING, re);
    };
    // mass_residual returns 4q − 4A_qXΦ here; flip so both blocks share one
    // Jacobian sign convention below.
    let mut r = vec![0.0; m + e];
    eval(&state, &mut varrho, &mut r);
    let mut rnorm = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    for _ in 0..STEADY_MAX_ITER {
        if rnorm < STEADY_TOL {
            break;
        }
        let mut jac = DMatrix::zeros(m + e, m + e);
        // Mass rows: ∂(4A_qXΦ − 4q)/∂Φ.
        for (k, &(u, v)) in inc.ends.iter().enumerate() {
            if u >= s {
                jac[(u - s, m + k)] = -4.0 * inc.area[k];
            }
            if v >= s {
                jac[(v - s, m + k)] = 4.0 * inc.area[k];
            }
        }
        // Momentum rows.
        for (k, &(u, v)) in inc.ends.iter().enumerate() {
            let row = m + k;
            if u >= s {
                jac[(row, u - s)] = -2.0 * tail[k] * tail[k] * varrho[u];
            }
            if v >= s {
                jac[(row, v - s)] = 2.0 * head[k] * head[k] * varrho[v];
            }
            jac[(row, m + k)] =
                inc.lambda[k] * inc.kappa[k] * signed_square_d1(state.phi[k], STEADY_SMOOTHING);
        }

        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| Error::LinearSolve("singular steady-state Jacobian".into()))?;

        // Keep free densities strictly positive along the damped step.
        let mut t_max: f64 = 1.0;
        for i in 0..m {
            let d = -step[i];
            if d < 0.0 {
                t_max = t_max.min(-0.9 * state.rho[i] / d);
            }
        }
        let mut t = t_max.min(1.0);
        let mut trial = state.clone();
        let mut r_trial = vec![0.0; m + e];
        loop {
            for i in 0..m {
                trial.rho[i] = state.rho[i] - t * step[i];
            }
            for k in 0..e {
                trial.phi[k] = state.phi[k] - t * step[m + k];
            }
            eval(&trial, &mut varrho, &mut r_trial);
            let trial_norm = r_trial.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if trial_norm < rnorm || t < 1e-8 {
                state = trial.clone();
                r.copy_from_slice(&r_trial);
                rnorm = trial_norm;
                break;
            }
            t *= 0.5;
        }
    }

    if rnorm >= 1e-10 {
        return Err(Error::NewtonFailure {
            iterations: STEADY_MAX_ITER,
            residual: rnorm,
        });
    }
    Ok(state)
}
