//! Forward time-domain integration of the lumped network DAE under prescribed
//! supplies, withdrawals, and boost ratios; the independent check on optimized
//! schedules.
//!
//! Each step advances the differential mass balance with an implicit trapezoid
//! rule written in conservation form: the stored-mass increment per edge is
//! the exact difference of boosted endpoint densities, so summing the step
//! equations telescopes and the linepack ledger balances to rounding error.
//! The momentum law is algebraic and is enforced at the end of every step.
//! The scheme is A-stable and second order in the step size.

use crate::dynamics::{
    boundary_flows, momentum_residual, pressure_slacks, signed_square_d1, station_power,
    SystemState,
};
use crate::error::{Error, Result};
use crate::network::{IncidenceMatrices, Network, Units};
use crate::solver::NlpModel;
use crate::transcription::NlpProblem;
use nalgebra::{DMatrix, DVector};

/// Per-step Newton target, acceptance floor, and iteration cap.
const SIM_TOL: f64 = 1e-12;
const SIM_ACCEPT: f64 = 1e-10;
const SIM_MAX_ITER: usize = 30;

/// A fully prescribed simulation: every control and boundary series sampled
/// on the uniform fine grid `t_n = n·step`, one row per grid point.
///
/// Row widths follow the network: `supply` per slack node, `withdrawal` per
/// free node (positive leaving the network), `ratio` per station. The series
/// must cover `duration`, i.e. hold `duration/step + 1` rows.
#[derive(Debug, Clone)]
pub struct SimScenario {
    pub net: Network,
    pub initial: SystemState,
    pub supply: Vec<Vec<f64>>,
    pub withdrawal: Vec<Vec<f64>>,
    pub ratio: Vec<Vec<f64>>,
    pub step: f64,
    pub duration: f64,
    pub smoothing: f64,
}

/// Simulated states plus the bookkeeping series derived from them.
///
/// `linepack` is the total stored mass Σ (XΛ/2)(ρ̲+ρ̄) per point; `inlet` and
/// `outlet` are per-edge endpoint fluxes recovered from finite-difference
/// density rates; `injected` holds the exact integral of each slack node's
/// inflow over step n, in the same units as ∫q dt.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    pub linepack: Vec<f64>,
    pub inlet: Vec<Vec<f64>>,
    pub outlet: Vec<Vec<f64>>,
    pub injected: Vec<Vec<f64>>,
}

/// Total stored mass for one density snapshot: Σ_edges (XΛ/2)(ρ̲ + ρ̄) with
/// boosted endpoint densities.
pub fn total_linepack(
    inc: &IncidenceMatrices,
    varrho: &[f64],
    tail: &[f64],
    head: &[f64],
) -> f64 {
    inc.ends
        .iter()
        .enumerate()
        .map(|(k, &(u, v))| {
            0.5 * inc.area[k] * inc.lambda[k] * (tail[k] * varrho[u] + head[k] * varrho[v])
        })
        .sum()
}

fn stack(sigma: &[f64], rho: &[f64]) -> Vec<f64> {
    let mut varrho = Vec::with_capacity(sigma.len() + rho.len());
    varrho.extend_from_slice(sigma);
    varrho.extend_from_slice(rho);
    varrho
}

/// Inverts the momentum law for the flux: ΛK·s(Φ,δ) = c has the closed form
/// Φ² = (√(δ⁴+4c²) − δ²)/2 with the sign of c.
fn algebraic_flux(c: f64, delta: f64) -> f64 {
    let d2 = delta * delta;
    let y = 0.5 * ((d2 * d2 + 4.0 * c * c).sqrt() - d2);
    y.max(0.0).sqrt().copysign(c)
}

/// One implicit trapezoid step: solves for the new state given both endpoint
/// controls, and returns it with the exact per-slack inflow integral.
#[allow(clippy::too_many_arguments)]
fn step_once(
    inc: &IncidenceMatrices,
    prev: &SystemState,
    sig_a: &[f64],
    sig_b: &[f64],
    q_a: &[f64],
    q_b: &[f64],
    tail_a: &[f64],
    head_a: &[f64],
    tail_b: &[f64],
    head_b: &[f64],
    h: f64,
    delta: f64,
) -> Result<(SystemState, Vec<f64>)> {
    let (s, m, e) = (inc.n_slack, inc.n_free, inc.n_edges());
    let dim = m + e;

    // Boosted endpoint-density sums at the step start; the storage increment
    // below is differenced against these.
    let varrho_a = stack(sig_a, &prev.rho);
    let base: Vec<f64> = inc
        .ends
        .iter()
        .enumerate()
        .map(|(k, &(u, v))| tail_a[k] * varrho_a[u] + head_a[k] * varrho_a[v])
        .collect();

    let mut state = prev.clone();
    let mut varrho = stack(sig_b, &state.rho);
    let eval = |st: &SystemState, varrho: &mut [f64], r: &mut [f64]| {
        varrho[s..].copy_from_slice(&st.rho);
        for v in r.iter_mut() {
            *v = 0.0;
        }
        for j in 0..m {
            r[j] = 2.0 * h * (q_a[j] + q_b[j]);
        }
        for (k, &(u, v)) in inc.ends.iter().enumerate() {
            let storage = inc.area[k]
                * inc.lambda[k]
                * (tail_b[k] * varrho[u] + head_b[k] * varrho[v] - base[k]);
            let transport = 2.0 * h * inc.area[k] * (prev.phi[k] + st.phi[k]);
            if u >= s {
                r[u - s] += storage + transport;
            }
            if v >= s {
                r[v - s] += storage - transport;
            }
        }
        let rmom = &mut r[m..];
        momentum_residual(inc, varrho, &st.phi, tail_b, head_b, delta, rmom);
    };

    let mut r = vec![0.0; dim];
    eval(&state, &mut varrho, &mut r);
    let mut rnorm = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut iterations = 0;

    while rnorm >= SIM_TOL && iterations < SIM_MAX_ITER {
        iterations += 1;
        let mut jac = DMatrix::zeros(dim, dim);
        for (k, &(u, v)) in inc.ends.iter().enumerate() {
            let xl = inc.area[k] * inc.lambda[k];
            for end in [u, v] {
                if end < s {
                    continue;
                }
                let row = end - s;
                if u >= s {
                    jac[(row, u - s)] += xl * tail_b[k];
                }
                if v >= s {
                    jac[(row, v - s)] += xl * head_b[k];
                }
                let sign = if end == u { 1.0 } else { -1.0 };
                jac[(row, m + k)] += sign * 2.0 * h * inc.area[k];
            }
            let row = m + k;
            if u >= s {
                jac[(row, u - s)] -= 2.0 * tail_b[k] * tail_b[k] * varrho[u];
            }
            if v >= s {
                jac[(row, v - s)] += 2.0 * head_b[k] * head_b[k] * varrho[v];
            }
            jac[(row, m + k)] = inc.lambda[k] * inc.kappa[k] * signed_square_d1(state.phi[k], delta);
        }

        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| Error::LinearSolve("singular step Jacobian".into()))?;

        // Damped update keeping free densities strictly positive.
        let mut t: f64 = 1.0;
        for i in 0..m {
            let d = -step[i];
            if d < 0.0 {
                t = t.min(-0.9 * state.rho[i] / d);
            }
        }
        let mut trial = state.clone();
        let mut r_trial = vec![0.0; dim];
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
    if rnorm >= SIM_ACCEPT {
        return Err(Error::NewtonFailure {
            iterations,
            residual: rnorm,
        });
    }

    // Exact inflow integral per slack node: the mass rows evaluated there,
    // divided by the factor 4 the residual convention carries.
    varrho[s..].copy_from_slice(&state.rho);
    let mut injected = vec![0.0; s];
    for (k, &(u, v)) in inc.ends.iter().enumerate() {
        let storage = inc.area[k]
            * inc.lambda[k]
            * (tail_b[k] * varrho[u] + head_b[k] * varrho[v] - base[k]);
        let transport = 2.0 * h * inc.area[k] * (prev.phi[k] + state.phi[k]);
        if u < s {
            injected[u] += 0.25 * (storage + transport);
        }
        if v < s {
            injected[v] += 0.25 * (storage - transport);
        }
    }
    Ok((state, injected))
}

/// Integrates the scenario and reports the trajectory with its bookkeeping
/// series. The returned states satisfy each step's mass balance below 1e-10
/// and the momentum law below 1e-10 in max-norm.
pub fn simulate(sc: &SimScenario) -> Result<Trajectory> {
    if sc.net.units != Units::Nondim {
        return Err(Error::InvalidInput(
            "simulation expects a dimensionless network".into(),
        ));
    }
    let inc = sc.net.incidence()?;
    let (s, m, e) = (inc.n_slack, inc.n_free, inc.n_edges());
    let n_pts = sc.supply.len();
    if n_pts < 2 {
        return Err(Error::InvalidInput(
            "control series need at least two samples".into(),
        ));
    }
    if sc.withdrawal.len() != n_pts || sc.ratio.len() != n_pts {
        return Err(Error::DimensionMismatch(format!(
            "control series disagree on length: {} supplies, {} withdrawals, {} ratios",
            n_pts,
            sc.withdrawal.len(),
            sc.ratio.len()
        )));
    }
    let n_comp = sc.net.compressors.len();
    for n in 0..n_pts {
        if sc.supply[n].len() != s || sc.withdrawal[n].len() != m || sc.ratio[n].len() != n_comp {
            return Err(Error::DimensionMismatch(format!(
                "control row {n} does not match the network ({s} slack, {m} free, {n_comp} stations)"
            )));
        }
    }
    if !(sc.step > 0.0) {
        return Err(Error::InvalidInput("step size must be positive".into()));
    }
    if !(sc.smoothing > 0.0) {
        return Err(Error::InvalidInput(
            "momentum smoothing must be positive".into(),
        ));
    }
    let n_steps = n_pts - 1;
    if (sc.duration - sc.step * n_steps as f64).abs() > 1e-9 * sc.duration.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "control series cover {} time units, scenario declares {}",
            sc.step * n_steps as f64,
            sc.duration
        )));
    }
    if sc.initial.rho.len() != m || sc.initial.phi.len() != e {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} densities and {} fluxes, network needs {m} and {e}",
            sc.initial.rho.len(),
            sc.initial.phi.len()
        )));
    }

    let mut tails = vec![vec![1.0; e]; n_pts];
    let mut heads = vec![vec![1.0; e]; n_pts];
    for n in 0..n_pts {
        sc.net
            .fill_edge_ratios(&sc.ratio[n], &mut tails[n], &mut heads[n]);
    }

    // The flux is algebraic: the start state must already satisfy the
    // momentum law or the first step would silently project it.
    let varrho0 = stack(&sc.supply[0], &sc.initial.rho);
    let mut rmom = vec![0.0; e];
    momentum_residual(
        &inc,
        &varrho0,
        &sc.initial.phi,
        &tails[0],
        &heads[0],
        sc.smoothing,
        &mut rmom,
    );
    let worst = rmom.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if worst >= 1e-8 {
        return Err(Error::InvalidInput(format!(
            "initial state violates the momentum law (residual {worst:.3e})"
        )));
    }

    let mut states = Vec::with_capacity(n_pts);
    states.push(sc.initial.clone());
    let mut injected = Vec::with_capacity(n_steps);
    for n in 0..n_steps {
        let prev = states.last().unwrap();
        let (next, inj) = step_once(
            &inc,
            prev,
            &sc.supply[n],
            &sc.supply[n + 1],
            &sc.withdrawal[n],
            &sc.withdrawal[n + 1],
            &tails[n],
            &heads[n],
            &tails[n + 1],
            &heads[n + 1],
            sc.step,
            sc.smoothing,
        )
        .map_err(|err| Error::SimulationStep {
            step: n,
            reason: err.to_string(),
        })?;
        states.push(next);
        injected.push(inj);
    }

    // Diagnostics: density rates by centered differences (second-order
    // one-sided at the ends), then linepack and endpoint flows per point.
    let varrho_pts: Vec<Vec<f64>> = (0..n_pts)
        .map(|n| stack(&sc.supply[n], &states[n].rho))
        .collect();
    let h = sc.step;
    let rate_at = |n: usize| -> Vec<f64> {
        let nn = s + m;
        let mut dot = vec![0.0; nn];
        for i in 0..nn {
            dot[i] = if n_pts == 2 {
                (varrho_pts[1][i] - varrho_pts[0][i]) / h
            } else if n == 0 {
                (-3.0 * varrho_pts[0][i] + 4.0 * varrho_pts[1][i] - varrho_pts[2][i]) / (2.0 * h)
            } else if n == n_pts - 1 {
                (3.0 * varrho_pts[n][i] - 4.0 * varrho_pts[n - 1][i] + varrho_pts[n - 2][i])
                    / (2.0 * h)
            } else {
                (varrho_pts[n + 1][i] - varrho_pts[n - 1][i]) / (2.0 * h)
            };
        }
        dot
    };

    let mut linepack = Vec::with_capacity(n_pts);
    let mut inlet = Vec::with_capacity(n_pts);
    let mut outlet = Vec::with_capacity(n_pts);
    for n in 0..n_pts {
        linepack.push(total_linepack(&inc, &varrho_pts[n], &tails[n], &heads[n]));
        let dot = rate_at(n);
        let (fin, fout) = boundary_flows(&inc, &dot, &states[n].phi, &tails[n], &heads[n]);
        inlet.push(fin);
        outlet.push(fout);
    }

    Ok(Trajectory {
        times: (0..n_pts).map(|n| n as f64 * h).collect(),
        states,
        linepack,
        inlet,
        outlet,
        injected,
    })
}

/// Outcome of replaying an optimized schedule through the fine integrator.
///
/// Deviations compare the simulated states against the optimizer's at shared
/// grid points; the periodicity gap is ‖x(T) − x(0)‖∞ of the simulated state.
/// `worst_pressure_slack` is the most binding pressure margin seen anywhere
/// (negative means a violation); `worst_power_margin` likewise for station
/// power in watts, infinite when no station has a finite limit.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub density_deviation: f64,
    pub flux_deviation: f64,
    pub periodicity_gap: f64,
    pub worst_pressure_slack: f64,
    pub worst_power_margin: f64,
    pub trajectory: Trajectory,
}

/// Replays a transcribed solution through the integrator at `refine`-times
/// finer resolution over one period, interpolating all controls with the same
/// piecewise-linear circular interpolant the transcription assumes.
///
/// The initial flux is re-solved from the solution's densities through the
/// closed-form momentum inverse, so a candidate whose fluxes disagree with
/// its densities is diagnosed by the report rather than rejected upfront.
pub fn validate_solution(p: &NlpProblem, x: &[f64], refine: usize) -> Result<ValidationReport> {
    if refine < 4 {
        return Err(Error::InvalidInput(
            "validation needs at least a 4-times finer grid".into(),
        ));
    }
    if x.len() != p.n_vars() {
        return Err(Error::DimensionMismatch(format!(
            "solution has {} variables, the problem {}",
            x.len(),
            p.n_vars()
        )));
    }
    let net = p.network();
    let inc = p.incidence();
    let grid = p.grid();
    let (s, m, e) = (inc.n_slack, inc.n_free, inc.n_edges());
    let n = grid.n();
    let n_comp = net.compressors.len();

    let sigma_series: Vec<Vec<f64>> = (0..s).map(|i| p.supply_series(i)).collect();
    let q_at: Vec<Vec<f64>> = (0..n).map(|k| p.withdrawals_at(x, k)).collect();
    let q_series: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|k| q_at[k][j]).collect()).collect();
    let a_series: Vec<Vec<f64>> = (0..n_comp).map(|c| p.ratio_series(x, c)).collect();

    let fine = n * refine;
    let h = grid.weight() / refine as f64;
    let mut supply = Vec::with_capacity(fine + 1);
    let mut withdrawal = Vec::with_capacity(fine + 1);
    let mut ratio = Vec::with_capacity(fine + 1);
    for f in 0..=fine {
        let t = grid.wrap(f as f64 * h);
        let row = |series: &[Vec<f64>]| -> Result<Vec<f64>> {
            series.iter().map(|sv| grid.interpolate(sv, t)).collect()
        };
        supply.push(row(&sigma_series)?);
        withdrawal.push(row(&q_series)?);
        ratio.push(row(&a_series)?);
    }

    // Consistent start: densities from the solution, fluxes from the
    // momentum inverse at those densities.
    let rho0 = p.point_state(x, 0).rho;
    let varrho0 = stack(&supply[0], &rho0);
    let mut tail0 = vec![1.0; e];
    let mut head0 = vec![1.0; e];
    net.fill_edge_ratios(&ratio[0], &mut tail0, &mut head0);
    let delta = p.options().smoothing;
    let phi0: Vec<f64> = inc
        .ends
        .iter()
        .enumerate()
        .map(|(k, &(u, v))| {
            let lo = tail0[k] * varrho0[u];
            let hi = head0[k] * varrho0[v];
            algebraic_flux((lo * lo - hi * hi) / (inc.lambda[k] * inc.kappa[k]), delta)
        })
        .collect();

    let scenario = SimScenario {
        net: net.clone(),
        initial: SystemState {
            rho: rho0,
            phi: phi0,
        },
        supply,
        withdrawal,
        ratio,
        step: h,
        duration: grid.horizon(),
        smoothing: delta,
    };
    let traj = simulate(&scenario)?;

    let mut density_deviation = 0.0f64;
    let mut flux_deviation = 0.0f64;
    for k in 0..n {
        let opt = p.point_state(x, k);
        let sim = &traj.states[k * refine];
        for j in 0..m {
            density_deviation = density_deviation.max((sim.rho[j] - opt.rho[j]).abs());
        }
        for ek in 0..e {
            flux_deviation = flux_deviation.max((sim.phi[ek] - opt.phi[ek]).abs());
        }
    }
    let first = &traj.states[0];
    let last = &traj.states[fine];
    let mut periodicity_gap = 0.0f64;
    for j in 0..m {
        periodicity_gap = periodicity_gap.max((last.rho[j] - first.rho[j]).abs());
    }
    for ek in 0..e {
        periodicity_gap = periodicity_gap.max((last.phi[ek] - first.phi[ek]).abs());
    }

    let scaling = net.scaling.expect("dimensionless network carries a scale");
    let mut worst_pressure_slack = f64::INFINITY;
    let mut worst_power_margin = f64::INFINITY;
    let mut tail = vec![1.0; e];
    let mut head = vec![1.0; e];
    for f in 0..=fine {
        let varrho = stack(&scenario.supply[f], &traj.states[f].rho);
        net.fill_edge_ratios(&scenario.ratio[f], &mut tail, &mut head);
        for slack in pressure_slacks(net, inc, &varrho, &tail, &head) {
            worst_pressure_slack = worst_pressure_slack.min(slack);
        }
        for (c, comp) in net.compressors.iter().enumerate() {
            if !comp.power_max.is_finite() {
                continue;
            }
            let mdot = traj.states[f].phi[comp.edge].abs()
                * inc.area[comp.edge]
                * scaling.mass_flow();
            let power = station_power(comp, mdot, scenario.ratio[f][c])?;
            worst_power_margin = worst_power_margin.min(comp.power_max - power);
        }
    }

    Ok(ValidationReport {
        density_deviation,
        flux_deviation,
        periodicity_gap,
        worst_pressure_slack,
        worst_power_margin,
        trajectory: traj,
    })
}
