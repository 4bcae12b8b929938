//! Sparse symmetric indefinite LDLᵀ with a fixed symbolic pattern.
//!
//! Up-looking factorization over the elimination tree of an upper-triangular
//! CSC matrix, in the style used by embedded QP solvers: unit lower factor,
//! diagonal D, no pivoting. Callers keep the matrix quasi-definite through
//! diagonal regularization and retry on a failed pivot or wrong inertia; the
//! factor reports its inertia for that purpose. A reverse Cuthill-McKee
//! ordering is provided to keep fill low on banded saddle-point systems.

use crate::error::{Error, Result};
use crate::sparse::Csc;

const NONE: usize = usize::MAX;

/// Factorization context: symbolic structure computed once, numeric arrays
/// and workspaces reused across refactorizations of the same pattern.
#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    etree: Vec<usize>,
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    l_vals: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    n_negative: usize,
    // workspaces
    y_vals: Vec<f64>,
    y_flag: Vec<usize>,
    elim: Vec<usize>,
    y_idx: Vec<usize>,
    next_space: Vec<usize>,
}

impl Ldl {
    /// Builds the elimination tree and column counts of L. The input must be
    /// square, strictly upper-triangular plus a structurally present diagonal.
    pub fn symbolic(upper: &Csc) -> Result<Ldl> {
        let n = upper.ncols;
        if upper.nrows != n {
            return Err(Error::LinearSolve("matrix is not square".into()));
        }
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for j in 0..n {
            flag[j] = j;
            let mut has_diag = false;
            for p in upper.colptr[j]..upper.colptr[j + 1] {
                let mut i = upper.rowidx[p];
                if i > j {
                    return Err(Error::LinearSolve(
                        "matrix must be upper triangular".into(),
                    ));
                }
                if i == j {
                    has_diag = true;
                    continue;
                }
                while flag[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    flag[i] = j;
                    i = etree[i];
                }
            }
            if !has_diag {
                return Err(Error::LinearSolve(format!(
                    "structural zero on the diagonal at column {j}"
                )));
            }
        }
        let mut l_colptr = vec![0usize; n + 1];
        for j in 0..n {
            l_colptr[j + 1] = l_colptr[j] + lnz[j];
        }
        let nnz_l = l_colptr[n];
        Ok(Ldl {
            n,
            etree,
            l_colptr,
            l_rowidx: vec![0; nnz_l],
            l_vals: vec![0.0; nnz_l],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            n_negative: 0,
            y_vals: vec![0.0; n],
            y_flag: vec![NONE; n],
            elim: vec![0; n],
            y_idx: vec![0; n],
            next_space: vec![0; n],
        })
    }

    /// Refactorizes with the values in `upper` (same pattern as the symbolic
    /// phase). Fails on a pivot smaller than `pivot_floor` in magnitude,
    /// leaving the retry policy to the caller.
    pub fn factor(&mut self, upper: &Csc, pivot_floor: f64) -> Result<()> {
        let n = self.n;
        self.next_space.copy_from_slice(&self.l_colptr[..n]);
        self.y_flag.fill(NONE);
        self.y_vals.fill(0.0);
        self.n_negative = 0;

        for k in 0..n {
            self.d[k] = 0.0;
            let mut nnz_y = 0usize;
            for p in upper.colptr[k]..upper.colptr[k + 1] {
                let i = upper.rowidx[p];
                if i == k {
                    self.d[k] = upper.vals[p];
                    continue;
                }
                self.y_vals[i] = upper.vals[p];
                if self.y_flag[i] != k {
                    // Mark the unvisited part of the path from i to the root
                    // below k, then push it root-first so popping from the
                    // end walks descendants before ancestors.
                    let mut node = i;
                    let mut n_elim = 0usize;
                    while node != NONE && node < k && self.y_flag[node] != k {
                        self.y_flag[node] = k;
                        self.elim[n_elim] = node;
                        n_elim += 1;
                        node = self.etree[node];
                    }
                    while n_elim > 0 {
                        n_elim -= 1;
                        self.y_idx[nnz_y] = self.elim[n_elim];
                        nnz_y += 1;
                    }
                }
            }
            for idx in (0..nnz_y).rev() {
                let c = self.y_idx[idx];
                let yv = self.y_vals[c];
                for p in self.l_colptr[c]..self.next_space[c] {
                    self.y_vals[self.l_rowidx[p]] -= self.l_vals[p] * yv;
                }
                let slot = self.next_space[c];
                self.l_rowidx[slot] = k;
                let lkc = yv * self.dinv[c];
                self.l_vals[slot] = lkc;
                self.d[k] -= yv * lkc;
                self.next_space[c] += 1;
                self.y_vals[c] = 0.0;
            }
            if !self.d[k].is_finite() || self.d[k].abs() <= pivot_floor {
                return Err(Error::LinearSolve(format!(
                    "pivot {:.3e} at column {k} below floor",
                    self.d[k]
                )));
            }
            if self.d[k] < 0.0 {
                self.n_negative += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// (positive, negative) pivot counts of the last successful factorization.
    pub fn inertia(&self) -> (usize, usize) {
        (self.n - self.n_negative, self.n_negative)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for j in 0..self.n {
            let xj = b[j];
            for p in self.l_colptr[j]..self.l_colptr[j + 1] {
                b[self.l_rowidx[p]] -= self.l_vals[p] * xj;
            }
        }
        for j in 0..self.n {
            b[j] *= self.dinv[j];
        }
        for j in (0..self.n).rev() {
            let mut xj = b[j];
            for p in self.l_colptr[j]..self.l_colptr[j + 1] {
                xj -= self.l_vals[p] * b[self.l_rowidx[p]];
            }
            b[j] = xj;
        }
    }

    /// Fill of the factor (structural nonzeros of L, excluding the unit
    /// diagonal).
    pub fn l_nnz(&self) -> usize {
        self.l_rowidx.len()
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern given by an upper
/// triangle. Returns `perm` with `perm[new] = old`; apply as
/// `K_new[i,j] = K[perm[i], perm[j]]`.
pub fn rcm_order(upper: &Csc) -> Vec<usize> {
    let n = upper.ncols;
    let mut adj = vec![Vec::new(); n];
    for j in 0..n {
        for p in upper.colptr[j]..upper.colptr[j + 1] {
            let i = upper.rowidx[p];
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();

    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    loop {
        // Lowest-degree unvisited node seeds the next component.
        let start = match (0..n).filter(|&i| !seen[i]).min_by_key(|&i| degree[i]) {
            Some(s) => s,
            None => break,
        };
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            let mut next: Vec<usize> = adj[i].iter().copied().filter(|&j| !seen[j]).collect();
            next.sort_unstable_by_key(|&j| degree[j]);
            for j in next {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Inverse of a permutation returned by [`rcm_order`].
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}
