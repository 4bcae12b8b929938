//! Primal-dual interior-point method for sparse nonlinear programs.
//!
//! Inequalities are shifted by slacks (`ineq(x) − s = 0, s ≥ 0`) and bounds
//! are handled with explicit bound duals, so each iteration solves one
//! symmetric quasi-definite system
//!
//! ```text
//! [ W+Σx+δw    0        J_Eᵀ   J_Iᵀ ] [dx]   [ −r_x  ]
//! [ 0          Σs+δw    0      −I   ] [ds] = [ −r_s  ]
//! [ J_E        0        −δc    0    ] [u ]   [ −c_E  ]
//! [ J_I        −I       0      −δc  ] [v ]   [ s−c_I ]
//! ```
//!
//! with `dy = −u`, `dz = −v`, factored by the fixed-pattern LDLᵀ under a
//! reverse Cuthill-McKee ordering. Wrong inertia or failed pivots trigger the
//! primal/dual regularization ladder (δw, δc). Steps obey a
//! fraction-to-boundary rule and an ℓ1 exact-penalty Armijo line search; the
//! barrier parameter shrinks monotonically once each barrier problem is
//! solved to within a factor of μ. Identical inputs produce identical iterate
//! sequences; there is no randomness anywhere.

use crate::error::{Error, Result};
use crate::solver::ldl::{invert_permutation, rcm_order, Ldl};
use crate::solver::model::{NlpModel, Pattern};
use crate::sparse::{Coo, Csc};

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Max-norm bound on stationarity, feasibility, and complementarity.
    pub kkt_tolerance: f64,
    pub mu_init: f64,
    /// Linear shrink factor κ_μ ∈ (0,1).
    pub mu_shrink: f64,
    /// Superlinear exponent θ ≥ 1; μ⁺ = min(κ_μ·μ, μ^θ).
    pub mu_power: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Static dual regularization −δc on the constraint block.
    pub dual_reg: f64,
    /// First primal regularization tried after an inertia failure.
    pub primal_reg_init: f64,
    /// Fraction of the bound range used to push the start strictly inside.
    pub bound_push: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            kkt_tolerance: 1e-8,
            mu_init: 1e-1,
            mu_shrink: 0.2,
            mu_power: 1.5,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            dual_reg: 1e-11,
            primal_reg_init: 1e-4,
            bound_push: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    Numerical,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub eq: f64,
    pub ineq: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.eq)
            .max(self.ineq)
            .max(self.complementarity)
    }
}

/// One line of the machine-readable iteration log.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub mu: f64,
    pub objective: f64,
    pub stationarity: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub complementarity: f64,
    pub primal_step: f64,
    pub dual_step: f64,
    pub primal_reg: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub slacks: Vec<f64>,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub log: Vec<IterRecord>,
}

struct Kkt {
    n: usize,
    m_eq: usize,
    m_ineq: usize,
    dim: usize,
    /// Permuted upper-triangle triplet targets, value slot per triplet.
    csc: Csc,
    map: Vec<usize>,
    /// Value-slot index of each diagonal entry, natural order.
    diag_slot: Vec<usize>,
    /// Value slots of off-diagonal entries touching a pinned variable; zeroed
    /// after every refill so the pinned row reduces to the identity.
    fixed_offdiag: Vec<usize>,
    fixed_vars: Vec<usize>,
    iperm: Vec<usize>,
    ldl: Ldl,
    base_vals: Vec<f64>,
    work_vals: Vec<f64>,
}

impl Kkt {
    fn build(
        model: &dyn NlpModel,
        hess: &Pattern,
        je: &Pattern,
        ji: &Pattern,
        fixed: &[bool],
    ) -> Result<Kkt> {
        let n = model.n_vars();
        let m_eq = model.n_eq();
        let m_ineq = model.n_ineq();
        let dim = n + 2 * m_ineq + m_eq;
        let (s0, y0, z0) = (n, n + m_ineq, n + m_ineq + m_eq);

        // Natural-order logical entries, lower-or-upper agnostic; the fold
        // into the permuted upper triangle happens below.
        let mut rows: Vec<usize> = Vec::new();
        let mut cols: Vec<usize> = Vec::new();
        for (&r, &c) in hess.rows.iter().zip(&hess.cols) {
            debug_assert!(r >= c && r < n);
            rows.push(r);
            cols.push(c);
        }
        let hess_len = rows.len();
        for d in 0..dim {
            rows.push(d);
            cols.push(d);
        }
        for (&r, &c) in je.rows.iter().zip(&je.cols) {
            rows.push(y0 + r);
            cols.push(c);
        }
        for (&r, &c) in ji.rows.iter().zip(&ji.cols) {
            rows.push(z0 + r);
            cols.push(c);
        }
        for j in 0..m_ineq {
            rows.push(s0 + j);
            cols.push(z0 + j);
        }

        // Order on a bandwidth-reducing permutation of the pattern.
        let mut pat = Coo::new(dim, dim);
        for (&r, &c) in rows.iter().zip(&cols) {
            pat.push(r.min(c), r.max(c), 1.0);
        }
        let perm = rcm_order(&pat.to_csc());
        let iperm = invert_permutation(&perm);

        let mut coo = Coo::new(dim, dim);
        for (&r, &c) in rows.iter().zip(&cols) {
            let (pr, pc) = (iperm[r], iperm[c]);
            coo.push(pr.min(pc), pr.max(pc), 0.0);
        }
        let (csc, map) = coo.to_csc_with_map();
        let diag_slot: Vec<usize> = (0..dim).map(|d| map[hess_len + d]).collect();
        let mut fixed_offdiag = Vec::new();
        for (t, (&r, &c)) in rows.iter().zip(&cols).enumerate() {
            if r != c && ((r < n && fixed[r]) || (c < n && fixed[c])) {
                fixed_offdiag.push(map[t]);
            }
        }
        let fixed_vars: Vec<usize> = (0..n).filter(|&i| fixed[i]).collect();
        let ldl = Ldl::symbolic(&csc)?;
        let nvals = csc.vals.len();
        Ok(Kkt {
            n,
            m_eq,
            m_ineq,
            dim,
            csc,
            map,
            diag_slot,
            fixed_offdiag,
            fixed_vars,
            iperm,
            ldl,
            base_vals: vec![0.0; nvals],
            work_vals: vec![0.0; nvals],
        })
    }

    /// Scatters freshly evaluated block values into the CSC slots. Triplet
    /// order matches `build`: Hessian, structural diagonal, J_E, J_I, s-z
    /// coupling.
    fn refill(
        &mut self,
        hess_vals: &[f64],
        sigma_x: &[f64],
        sigma_s: &[f64],
        je_vals: &[f64],
        ji_vals: &[f64],
    ) {
        self.base_vals.fill(0.0);
        let mut t = 0usize;
        for &v in hess_vals {
            self.base_vals[self.map[t]] += v;
            t += 1;
        }
        for d in 0..self.dim {
            let v = if d < self.n {
                sigma_x[d]
            } else if d < self.n + self.m_ineq {
                sigma_s[d - self.n]
            } else {
                0.0
            };
            self.base_vals[self.map[t]] += v;
            t += 1;
        }
        for &v in je_vals.iter().chain(ji_vals) {
            self.base_vals[self.map[t]] += v;
            t += 1;
        }
        for _ in 0..self.m_ineq {
            self.base_vals[self.map[t]] += -1.0;
            t += 1;
        }
        debug_assert_eq!(t, self.map.len());
        for &slot in &self.fixed_offdiag {
            self.base_vals[slot] = 0.0;
        }
    }

    /// Factors with the given regularization; reports whether the inertia is
    /// (n + mI positive, mE + mI negative).
    fn factor(&mut self, delta_w: f64, delta_c: f64) -> Result<bool> {
        self.work_vals.copy_from_slice(&self.base_vals);
        let scale = self
            .base_vals
            .iter()
            .fold(1.0f64, |a, v| a.max(v.abs()));
        for d in 0..self.dim {
            let slot = self.diag_slot[d];
            if d < self.n + self.m_ineq {
                self.work_vals[slot] += delta_w;
            } else {
                self.work_vals[slot] -= delta_c;
            }
        }
        // Pinned variables get an identity row regardless of regularization.
        for &i in &self.fixed_vars {
            self.work_vals[self.diag_slot[i]] = 1.0;
        }
        self.csc.vals.copy_from_slice(&self.work_vals);
        // A constraint column ordered ahead of its variables eliminates to a
        // pivot of exactly −δc, which is intended, so the stray-pivot floor
        // must sit safely below the dual regularization whatever the matrix
        // scale is.
        let floor = (1e-15 * scale).min(0.25 * delta_c);
        match self.ldl.factor(&self.csc, floor) {
            Ok(()) => {
                let (_, neg) = self.ldl.inertia();
                Ok(neg == self.m_eq + self.m_ineq)
            }
            Err(_) => Ok(false),
        }
    }

    /// Solves K·sol = rhs (natural ordering) with iterative refinement. Tiny
    /// quasi-definite pivots (the −δc block) amplify roundoff, so refinement
    /// repeats while it keeps paying off.
    fn solve(&self, rhs: &[f64], sol: &mut [f64]) {
        let mut pb = vec![0.0; self.dim];
        for d in 0..self.dim {
            pb[self.iperm[d]] = rhs[d];
        }
        let mut px = pb.clone();
        self.ldl.solve_in_place(&mut px);
        let bnorm = pb.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut last = f64::INFINITY;
        for _ in 0..4 {
            let mut res = pb.clone();
            self.sym_matvec_sub(&px, &mut res);
            let rnorm = res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if rnorm <= 1e-11 * bnorm || rnorm >= 0.5 * last {
                break;
            }
            last = rnorm;
            let mut corr = res;
            self.ldl.solve_in_place(&mut corr);
            for d in 0..self.dim {
                px[d] += corr[d];
            }
        }
        for d in 0..self.dim {
            sol[d] = px[self.iperm[d]];
        }
    }

    /// res ← res − K·x with K the factored (regularized) upper-stored matrix.
    fn sym_matvec_sub(&self, x: &[f64], res: &mut [f64]) {
        for j in 0..self.dim {
            for p in self.csc.colptr[j]..self.csc.colptr[j + 1] {
                let i = self.csc.rowidx[p];
                let v = self.csc.vals[p];
                res[i] -= v * x[j];
                if i != j {
                    res[j] -= v * x[i];
                }
            }
        }
    }
}

fn jt_acc(pat: &Pattern, vals: &[f64], lam: &[f64], out: &mut [f64], sign: f64) {
    for ((&r, &c), &v) in pat.rows.iter().zip(&pat.cols).zip(vals) {
        out[c] += sign * v * lam[r];
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn one_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Sparsity of the constraint Jacobian as a fraction of the dense row×var
/// rectangle; a headline metric for run manifests.
pub fn jacobian_density(model: &dyn NlpModel) -> f64 {
    let je = model.eq_jacobian_pattern();
    let ji = model.ineq_jacobian_pattern();
    let rows = (model.n_eq() + model.n_ineq()) as f64;
    let cols = model.n_vars() as f64;
    if rows * cols == 0.0 {
        0.0
    } else {
        (je.len() + ji.len()) as f64 / (rows * cols)
    }
}

pub fn solve(model: &dyn NlpModel, opts: &SolverOptions) -> Result<SolveResult> {
    let n = model.n_vars();
    let m_eq = model.n_eq();
    let m_ineq = model.n_ineq();
    let (lb, ub) = model.bounds();
    if lb.len() != n || ub.len() != n {
        return Err(Error::DimensionMismatch(
            "bound vectors must match the variable count".into(),
        ));
    }
    if lb.iter().zip(&ub).any(|(l, u)| l > u) {
        return Ok(SolveResult {
            status: SolveStatus::Infeasible,
            x: model.initial_point(),
            eq_duals: vec![0.0; m_eq],
            ineq_duals: vec![0.0; m_ineq],
            lower_duals: vec![0.0; n],
            upper_duals: vec![0.0; n],
            slacks: vec![0.0; m_ineq],
            objective: f64::NAN,
            kkt: KktResiduals::default(),
            iterations: 0,
            log: Vec::new(),
        });
    }

    // Variables whose bounds coincide are pinned: no barrier terms, a fixed
    // value, and an identity row in the step system. Their stationarity gap is
    // absorbed into the bound duals after the solve, exactly as an active
    // two-sided bound would.
    let fixed: Vec<bool> = (0..n)
        .map(|i| {
            lb[i].is_finite() && ub[i].is_finite() && ub[i] - lb[i] <= 1e-12 * lb[i].abs().max(1.0)
        })
        .collect();
    let has_lb: Vec<bool> = (0..n).map(|i| lb[i].is_finite() && !fixed[i]).collect();
    let has_ub: Vec<bool> = (0..n).map(|i| ub[i].is_finite() && !fixed[i]).collect();

    let hess_pat = model.hessian_pattern();
    let je_pat = model.eq_jacobian_pattern();
    let ji_pat = model.ineq_jacobian_pattern();
    let mut kkt = Kkt::build(model, &hess_pat, &je_pat, &ji_pat, &fixed)?;

    // Start strictly inside the box.
    let mut x = model.initial_point();
    for i in 0..n {
        let (l, u) = (lb[i], ub[i]);
        if fixed[i] {
            x[i] = 0.5 * (l + u);
        } else if l.is_finite() && u.is_finite() {
            let pad = (opts.bound_push * (u - l)).min(0.5 * (u - l));
            x[i] = x[i].max(l + pad).min(u - pad);
        } else if l.is_finite() {
            x[i] = x[i].max(l + opts.bound_push * l.abs().max(1.0));
        } else if u.is_finite() {
            x[i] = x[i].min(u - opts.bound_push * u.abs().max(1.0));
        }
    }

    let mut mu = opts.mu_init;
    let mut ci = vec![0.0; m_ineq];
    model.ineq_constraints(&x, &mut ci);
    let mut s: Vec<f64> = ci.iter().map(|c| c.max(1e-2)).collect();
    let mut y = vec![0.0; m_eq];
    let mut z: Vec<f64> = s.iter().map(|si| (mu / si).clamp(1e-8, 1e4)).collect();
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    for i in 0..n {
        if has_lb[i] {
            zl[i] = (mu / (x[i] - lb[i])).clamp(1e-8, 1e4);
        }
        if has_ub[i] {
            zu[i] = (mu / (ub[i] - x[i])).clamp(1e-8, 1e4);
        }
    }

    let mut grad = vec![0.0; n];
    let mut ce = vec![0.0; m_eq];
    let mut je_vals = vec![0.0; je_pat.len()];
    let mut ji_vals = vec![0.0; ji_pat.len()];
    let mut hess_vals = vec![0.0; hess_pat.len()];
    let mut log = Vec::new();
    let mut delta_w_last = 0.0f64;
    let mut penalty = 1.0f64;

    let barrier_obj = |model: &dyn NlpModel, x: &[f64], s: &[f64], mu: f64| -> f64 {
        let mut v = model.objective(x);
        for i in 0..n {
            if has_lb[i] {
                v -= mu * (x[i] - lb[i]).ln();
            }
            if has_ub[i] {
                v -= mu * (ub[i] - x[i]).ln();
            }
        }
        for si in s {
            v -= mu * si.ln();
        }
        v
    };

    let mut status = SolveStatus::MaxIterations;
    let mut iterations = opts.max_iterations;

    for iter in 0..opts.max_iterations {
        model.gradient(&x, &mut grad);
        model.eq_constraints(&x, &mut ce);
        model.ineq_constraints(&x, &mut ci);
        model.jacobian_values(&x, &mut je_vals, &mut ji_vals);

        // KKT residuals at the current μ and at μ = 0.
        let mut r_x = grad.clone();
        jt_acc(&je_pat, &je_vals, &y, &mut r_x, -1.0);
        jt_acc(&ji_pat, &ji_vals, &z, &mut r_x, -1.0);
        let mut stat0 = r_x.clone();
        for i in 0..n {
            if fixed[i] {
                // Pinned variables take no step; any stationarity gap is
                // absorbed into their bound multipliers on exit.
                stat0[i] = 0.0;
                r_x[i] = 0.0;
                continue;
            }
            stat0[i] += -zl[i] + zu[i];
            if has_lb[i] {
                r_x[i] -= mu / (x[i] - lb[i]);
            }
            if has_ub[i] {
                r_x[i] += mu / (ub[i] - x[i]);
            }
        }
        let r_s: Vec<f64> = (0..m_ineq).map(|j| z[j] - mu / s[j]).collect();
        let r_i: Vec<f64> = (0..m_ineq).map(|j| ci[j] - s[j]).collect();

        let comp0 = {
            let mut c = 0.0f64;
            for j in 0..m_ineq {
                c = c.max((s[j] * z[j]).abs());
            }
            for i in 0..n {
                if has_lb[i] {
                    c = c.max(((x[i] - lb[i]) * zl[i]).abs());
                }
                if has_ub[i] {
                    c = c.max(((ub[i] - x[i]) * zu[i]).abs());
                }
            }
            c
        };
        let err0 = inf_norm(&stat0).max(inf_norm(&ce)).max(inf_norm(&r_i)).max(comp0);

        if err0 <= opts.kkt_tolerance {
            status = SolveStatus::Optimal;
            iterations = iter;
            break;
        }

        // Barrier subproblem converged: shrink μ and re-center.
        let comp_mu = {
            let mut c = 0.0f64;
            for j in 0..m_ineq {
                c = c.max((s[j] * z[j] - mu).abs());
            }
            for i in 0..n {
                if has_lb[i] {
                    c = c.max(((x[i] - lb[i]) * zl[i] - mu).abs());
                }
                if has_ub[i] {
                    c = c.max(((ub[i] - x[i]) * zu[i] - mu).abs());
                }
            }
            c
        };
        let err_mu = inf_norm(&r_x).max(inf_norm(&ce)).max(inf_norm(&r_i)).max(comp_mu);
        if err_mu <= 10.0 * mu && mu > opts.kkt_tolerance / 100.0 {
            mu = (opts.kkt_tolerance / 100.0).max((opts.mu_shrink * mu).min(mu.powf(opts.mu_power)));
            continue;
        }

        // Assemble and factor the step system.
        model.hessian_values(&x, &y, &z, &mut hess_vals);
        let mut sigma_x = vec![0.0; n];
        for i in 0..n {
            if has_lb[i] {
                sigma_x[i] += zl[i] / (x[i] - lb[i]);
            }
            if has_ub[i] {
                sigma_x[i] += zu[i] / (ub[i] - x[i]);
            }
        }
        let sigma_s: Vec<f64> = (0..m_ineq).map(|j| z[j] / s[j]).collect();
        kkt.refill(&hess_vals, &sigma_x, &sigma_s, &je_vals, &ji_vals);

        let mut delta_w = 0.0;
        let mut factored = kkt.factor(delta_w, opts.dual_reg)?;
        if !factored {
            delta_w = if delta_w_last == 0.0 {
                opts.primal_reg_init
            } else {
                (delta_w_last / 3.0).max(1e-20)
            };
            loop {
                factored = kkt.factor(delta_w, opts.dual_reg)?;
                if factored {
                    delta_w_last = delta_w;
                    break;
                }
                delta_w *= 8.0;
                if delta_w > 1e40 {
                    status = SolveStatus::Numerical;
                    iterations = iter;
                    break;
                }
            }
            if status == SolveStatus::Numerical {
                break;
            }
        }

        let dim = kkt.dim;
        let (s0, y0, z0) = (n, n + m_ineq, n + m_ineq + m_eq);
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            rhs[i] = -r_x[i];
        }
        for j in 0..m_ineq {
            rhs[s0 + j] = -r_s[j];
            rhs[z0 + j] = -r_i[j];
        }
        for r in 0..m_eq {
            rhs[y0 + r] = -ce[r];
        }
        let mut sol = vec![0.0; dim];
        kkt.solve(&rhs, &mut sol);
        let dx = &sol[0..n];
        let ds = &sol[s0..s0 + m_ineq];
        let dy: Vec<f64> = sol[y0..y0 + m_eq].iter().map(|v| -v).collect();
        let dz: Vec<f64> = sol[z0..z0 + m_ineq].iter().map(|v| -v).collect();

        let dzl: Vec<f64> = (0..n)
            .map(|i| {
                if has_lb[i] {
                    (mu - zl[i] * dx[i]) / (x[i] - lb[i]) - zl[i]
                } else {
                    0.0
                }
            })
            .collect();
        let dzu: Vec<f64> = (0..n)
            .map(|i| {
                if has_ub[i] {
                    (mu + zu[i] * dx[i]) / (ub[i] - x[i]) - zu[i]
                } else {
                    0.0
                }
            })
            .collect();

        // Fraction-to-boundary limits.
        let tau = 0.99f64.max(1.0 - mu);
        let mut a_primal: f64 = 1.0;
        for i in 0..n {
            if has_lb[i] && dx[i] < 0.0 {
                a_primal = a_primal.min(-tau * (x[i] - lb[i]) / dx[i]);
            }
            if has_ub[i] && dx[i] > 0.0 {
                a_primal = a_primal.min(tau * (ub[i] - x[i]) / dx[i]);
            }
        }
        for j in 0..m_ineq {
            if ds[j] < 0.0 {
                a_primal = a_primal.min(-tau * s[j] / ds[j]);
            }
        }
        let mut a_dual: f64 = 1.0;
        for j in 0..m_ineq {
            if dz[j] < 0.0 {
                a_dual = a_dual.min(-tau * z[j] / dz[j]);
            }
        }
        for i in 0..n {
            if has_lb[i] && dzl[i] < 0.0 {
                a_dual = a_dual.min(-tau * zl[i] / dzl[i]);
            }
            if has_ub[i] && dzu[i] < 0.0 {
                a_dual = a_dual.min(-tau * zu[i] / dzu[i]);
            }
        }

        // ℓ1 exact-penalty line search on (x, s).
        let full_dual = inf_norm(&dy).max(inf_norm(&dz)).max(inf_norm(&y)).max(inf_norm(&z));
        penalty = penalty.max(1.1 * full_dual + 1.0);
        let viol0 = one_norm(&ce) + one_norm(&r_i);
        let phi0 = barrier_obj(model, &x, &s, mu) + penalty * viol0;
        let mut descent = 0.0;
        for i in 0..n {
            descent += grad[i] * dx[i];
            if has_lb[i] {
                descent -= mu * dx[i] / (x[i] - lb[i]);
            }
            if has_ub[i] {
                descent += mu * dx[i] / (ub[i] - x[i]);
            }
        }
        for j in 0..m_ineq {
            descent -= mu * ds[j] / s[j];
        }
        descent -= penalty * viol0;

        let mut alpha = a_primal;
        let mut accepted = false;
        let mut x_try = x.clone();
        let mut s_try = s.clone();
        let mut ce_try = vec![0.0; m_eq];
        let mut ci_try = vec![0.0; m_ineq];
        for _ in 0..=opts.max_backtracks {
            for i in 0..n {
                x_try[i] = x[i] + alpha * dx[i];
            }
            for j in 0..m_ineq {
                s_try[j] = s[j] + alpha * ds[j];
            }
            model.eq_constraints(&x_try, &mut ce_try);
            model.ineq_constraints(&x_try, &mut ci_try);
            let viol: f64 = one_norm(&ce_try)
                + (0..m_ineq).map(|j| (ci_try[j] - s_try[j]).abs()).sum::<f64>();
            let phi = barrier_obj(model, &x_try, &s_try, mu) + penalty * viol;
            if phi <= phi0 + opts.armijo * alpha * descent.min(0.0) && phi.is_finite() {
                accepted = true;
                break;
            }
            alpha *= opts.backtrack;
        }
        if !accepted {
            // Take the smallest damped step rather than stalling; the next
            // factorization re-regularizes around the new point.
            for i in 0..n {
                x_try[i] = x[i] + alpha * dx[i];
            }
            for j in 0..m_ineq {
                s_try[j] = s[j] + alpha * ds[j];
            }
        }
        x.copy_from_slice(&x_try);
        s.copy_from_slice(&s_try);
        for r in 0..m_eq {
            y[r] += a_dual * dy[r];
        }
        for j in 0..m_ineq {
            z[j] = (z[j] + a_dual * dz[j]).max(0.0);
        }
        for i in 0..n {
            if has_lb[i] {
                zl[i] = (zl[i] + a_dual * dzl[i]).max(0.0);
            }
            if has_ub[i] {
                zu[i] = (zu[i] + a_dual * dzu[i]).max(0.0);
            }
        }

        log.push(IterRecord {
            iter,
            mu,
            objective: model.objective(&x),
            stationarity: inf_norm(&stat0),
            eq_violation: inf_norm(&ce),
            ineq_violation: inf_norm(&r_i),
            complementarity: comp0,
            primal_step: alpha,
            dual_step: a_dual,
            primal_reg: delta_w,
        });
    }

    // Final independent residual snapshot.
    model.gradient(&x, &mut grad);
    model.eq_constraints(&x, &mut ce);
    model.ineq_constraints(&x, &mut ci);
    model.jacobian_values(&x, &mut je_vals, &mut ji_vals);
    let mut stat = grad.clone();
    jt_acc(&je_pat, &je_vals, &y, &mut stat, -1.0);
    jt_acc(&ji_pat, &ji_vals, &z, &mut stat, -1.0);
    for i in 0..n {
        if fixed[i] {
            // The stationarity gap at a pinned variable belongs to its bound
            // multipliers; split it by sign so the reported residual is exact.
            zl[i] = stat[i].max(0.0);
            zu[i] = (-stat[i]).max(0.0);
            stat[i] = 0.0;
            continue;
        }
        stat[i] += -zl[i] + zu[i];
    }
    let mut comp = 0.0f64;
    for j in 0..m_ineq {
        comp = comp.max((s[j] * z[j]).abs());
    }
    for i in 0..n {
        if lb[i].is_finite() {
            comp = comp.max(((x[i] - lb[i]) * zl[i]).abs());
        }
        if ub[i].is_finite() {
            comp = comp.max(((ub[i] - x[i]) * zu[i]).abs());
        }
    }
    let kkt_res = KktResiduals {
        stationarity: inf_norm(&stat),
        eq: inf_norm(&ce),
        ineq: (0..m_ineq).fold(0.0f64, |a, j| a.max((ci[j] - s[j]).abs())),
        complementarity: comp,
    };

    Ok(SolveResult {
        status,
        objective: model.objective(&x),
        x,
        eq_duals: y,
        ineq_duals: z,
        lower_duals: zl,
        upper_duals: zu,
        slacks: s,
        kkt: kkt_res,
        iterations,
        log,
    })
}
