//! Minimal compressed sparse column matrices.
//!
//! The solver needs a fixed-pattern CSC representation that can be refilled
//! in place every iteration, so the triplet-to-CSC conversion returns a
//! scatter map from each input triplet to its storage slot.

/// Triplet (COO) accumulator.
#[derive(Debug, Clone, Default)]
pub struct Coo {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Coo {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Coo {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    /// Compresses to CSC, summing duplicate entries.
    pub fn to_csc(&self) -> Csc {
        let (csc, _) = self.to_csc_with_map();
        csc
    }

    /// Compresses to CSC and returns, for every input triplet, the index of
    /// the value slot it contributes to. Duplicates map to one shared slot.
    pub fn to_csc_with_map(&self) -> (Csc, Vec<usize>) {
        let nnz_in = self.rows.len();
        let mut order: Vec<usize> = (0..nnz_in).collect();
        order.sort_unstable_by_key(|&k| (self.cols[k], self.rows[k]));

        let mut colptr = vec![0usize; self.ncols + 1];
        let mut rowidx = Vec::with_capacity(nnz_in);
        let mut vals = Vec::with_capacity(nnz_in);
        let mut map = vec![0usize; nnz_in];
        let mut prev: Option<(usize, usize)> = None;

        for &k in &order {
            let (r, c) = (self.rows[k], self.cols[k]);
            if prev == Some((c, r)) {
                let slot = vals.len() - 1;
                vals[slot] += self.vals[k];
                map[k] = slot;
            } else {
                rowidx.push(r);
                vals.push(self.vals[k]);
                colptr[c + 1] += 1;
                map[k] = vals.len() - 1;
                prev = Some((c, r));
            }
        }
        for c in 0..self.ncols {
            colptr[c + 1] += colptr[c];
        }
        (
            Csc {
                nrows: self.nrows,
                ncols: self.ncols,
                colptr,
                rowidx,
                vals,
            },
            map,
        )
    }
}

/// Compressed sparse column matrix with a fixed pattern.
#[derive(Debug, Clone)]
pub struct Csc {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csc {
    pub fn nnz(&self) -> usize {
        self.rowidx.len()
    }

    /// y += alpha * A * x
    pub fn matvec_acc(&self, x: &[f64], alpha: f64, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for c in 0..self.ncols {
            let xc = alpha * x[c];
            if xc == 0.0 {
                continue;
            }
            for p in self.colptr[c]..self.colptr[c + 1] {
                y[self.rowidx[p]] += self.vals[p] * xc;
            }
        }
    }

    /// y += alpha * Aᵀ * x
    pub fn matvec_transpose_acc(&self, x: &[f64], alpha: f64, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for c in 0..self.ncols {
            let mut acc = 0.0;
            for p in self.colptr[c]..self.colptr[c + 1] {
                acc += self.vals[p] * x[self.rowidx[p]];
            }
            y[c] += alpha * acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_acc(x, 1.0, &mut y);
        y
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for c in 0..self.ncols {
            for p in self.colptr[c]..self.colptr[c + 1] {
                m[(self.rowidx[p], c)] += self.vals[p];
            }
        }
        m
    }
}
