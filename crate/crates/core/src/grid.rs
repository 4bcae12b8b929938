//! Circular collocation grid: uniform time points on a periodized horizon,
//! trapezoid quadrature weights, the wrapped forward-difference operator, and
//! the piecewise-linear circular interpolant.
//!
//! Periodicity is a property of the scheme, not a constraint: the difference
//! stencil at the last point wraps to the first, so any grid function is
//! implicitly treated as one period of a periodic signal.

use crate::error::{Error, Result};
use crate::sparse::{Coo, Csc};

/// Uniform circular grid with points t_k = T·k/N (k = 0..N−1) and equal
/// weights T/N.
#[derive(Debug, Clone, Copy)]
pub struct CollocationGrid {
    horizon: f64,
    n: usize,
}

impl CollocationGrid {
    pub fn new(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        if n < 2 {
            return Err(Error::InvalidInput(
                "a circular grid needs at least 2 points".into(),
            ));
        }
        Ok(Self { horizon, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Quadrature weight w_k = T/N, identical at every point.
    pub fn weight(&self) -> f64 {
        self.horizon / self.n as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        debug_assert!(k < self.n);
        self.horizon * k as f64 / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.point(k)).collect()
    }

    /// Maps any time onto the fundamental period [0, T).
    pub fn wrap(&self, t: f64) -> f64 {
        let w = t.rem_euclid(self.horizon);
        if w == self.horizon {
            0.0
        } else {
            w
        }
    }

    pub fn diff(&self) -> DiffMatrix {
        DiffMatrix {
            n: self.n,
            rate: self.n as f64 / self.horizon,
        }
    }

    /// Piecewise-linear circular interpolant: exact at grid points, the last
    /// interval closes onto the first value. `t` must lie in [0, T).
    pub fn interpolate(&self, values: &[f64], t: f64) -> Result<f64> {
        if values.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "interpolant needs {} samples, got {}",
                self.n,
                values.len()
            )));
        }
        if !(0.0..self.horizon).contains(&t) {
            return Err(Error::InvalidInput(format!(
                "time {t} outside the grid period [0, {})",
                self.horizon
            )));
        }
        let rate = self.n as f64 / self.horizon;
        let k = ((t * rate).floor() as usize).min(self.n - 1);
        let next = values[(k + 1) % self.n];
        Ok(values[k] + (next - values[k]) * (t - self.point(k)) * rate)
    }
}

/// Circular forward-difference operator: (Dy)_k = (y_{k+1} − y_k)·N/T with
/// index N wrapping to 1. Exactly 2N structural nonzeros; annihilates
/// constants.
#[derive(Debug, Clone, Copy)]
pub struct DiffMatrix {
    n: usize,
    rate: f64,
}

impl DiffMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Magnitude N/T of every entry; the diagonal carries −rate, the wrapped
    /// superdiagonal +rate.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for k in 0..self.n {
            out[k] = (y[(k + 1) % self.n] - y[k]) * self.rate;
        }
    }

    pub fn to_csc(&self) -> Csc {
        let mut coo = Coo::new(self.n, self.n);
        for k in 0..self.n {
            coo.push(k, k, -self.rate);
            coo.push(k, (k + 1) % self.n, self.rate);
        }
        coo.to_csc()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hourly_grid_has_unit_weights() {
        let g = CollocationGrid::new(24.0, 24).unwrap();
        assert_eq!(g.weight(), 1.0);
        assert_eq!(g.points(), (0..24).map(|k| k as f64).collect::<Vec<_>>());
        let sum: f64 = (0..g.n()).map(|_| g.weight()).sum();
        assert_eq!(sum, 24.0);
    }

    #[test]
    fn quarter_grid_points() {
        let g = CollocationGrid::new(1.0, 4).unwrap();
        assert_eq!(g.points(), vec![0.0, 0.25, 0.5, 0.75]);
        assert!(CollocationGrid::new(1.0, 1).is_err());
        assert!(CollocationGrid::new(0.0, 4).is_err());
    }

    #[test]
    fn diff_matrix_entries_and_wrap() {
        let g = CollocationGrid::new(1.0, 4).unwrap();
        let d = g.diff().to_csc().to_dense();
        for k in 0..4 {
            assert_eq!(d[(k, k)], -4.0);
            assert_eq!(d[(k, (k + 1) % 4)], 4.0);
        }
        assert_eq!(d[(3, 0)], 4.0);
        let nnz = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|&(i, j)| d[(i, j)] != 0.0)
            .count();
        assert_eq!(nnz, 8);
    }

    #[test]
    fn diff_annihilates_constants_exactly() {
        let g = CollocationGrid::new(24.0, 17).unwrap();
        let y = vec![3.25; 17];
        let mut dy = vec![f64::NAN; 17];
        g.diff().apply(&y, &mut dy);
        assert!(dy.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn diff_approximates_sine_derivative() {
        let t_end = 24.0;
        let err = |n: usize| {
            let g = CollocationGrid::new(t_end, n).unwrap();
            let w = 2.0 * std::f64::consts::PI / t_end;
            let y: Vec<f64> = g.points().iter().map(|t| (w * t).sin()).collect();
            let mut dy = vec![0.0; n];
            g.diff().apply(&y, &mut dy);
            g.points()
                .iter()
                .zip(&dy)
                .map(|(t, d)| (d - w * (w * t).cos()).abs())
                .fold(0.0f64, f64::max)
        };
        // First-order stencil: error halves when the grid doubles.
        let (e16, e32, e64) = (err(16), err(32), err(64));
        assert!(e16 / e32 > 1.8 && e16 / e32 < 2.2);
        assert!(e32 / e64 > 1.8 && e32 / e64 < 2.2);
    }

    #[test]
    fn circular_integral_of_derivative_vanishes() {
        let g = CollocationGrid::new(7.0, 31).unwrap();
        let y: Vec<f64> = (0..31).map(|k| ((k * 37 % 11) as f64).sin() + 2.0).collect();
        let mut dy = vec![0.0; 31];
        g.diff().apply(&y, &mut dy);
        let total: f64 = dy.iter().map(|d| d * g.weight()).sum();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn interpolation_hits_grid_points_and_wraps() {
        let g = CollocationGrid::new(2.0, 2).unwrap();
        let y = [1.0, 3.0];
        assert_relative_eq!(g.interpolate(&y, 0.5).unwrap(), 2.0);
        assert_eq!(g.interpolate(&y, 0.0).unwrap(), 1.0);
        assert_eq!(g.interpolate(&y, 1.0).unwrap(), 3.0);
        // Last interval closes onto y[0].
        assert_relative_eq!(g.interpolate(&y, 1.5).unwrap(), 2.0);
        assert!(g.interpolate(&y, 2.0).is_err());
        assert!(g.interpolate(&y, -0.1).is_err());
        assert_eq!(g.wrap(2.0), 0.0);
        assert_relative_eq!(g.wrap(-0.5), 1.5);
    }
}
