//! Cubic interpolating splines used for tabulated reluctance curves.

use crate::error::{Error, Result};

/// Boundary condition applied at the left end of the table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LeftEnd {
    Natural,
    Slope(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64], left: LeftEnd) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::invalid("spline tables need at least three (x, y) pairs"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("spline abscissae must be finite and strictly increasing"));
        }
        // Tridiagonal system for the knot second derivatives.
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        match left {
            LeftEnd::Natural => {
                diag[0] = 1.0;
            }
            LeftEnd::Slope(s) => {
                let h = x[1] - x[0];
                diag[0] = h / 3.0;
                sup[0] = h / 6.0;
                rhs[0] = (y[1] - y[0]) / h - s;
            }
        }
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            sub[i] = h0 / 6.0;
            diag[i] = (h0 + h1) / 3.0;
            sup[i] = h1 / 6.0;
            rhs[i] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        }
        diag[n - 1] = 1.0;
        // Thomas algorithm
        for i in 1..n {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut m = vec![0.0; n];
        m[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
        }
        Ok(Self { x: x.to_vec(), y: y.to_vec(), m })
    }

    /// Smallest first derivative over the table, found exactly per interval
    /// (the slope is quadratic there).
    pub fn min_slope(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for i in 0..self.x.len() - 1 {
            let (a, b) = (self.x[i], self.x[i + 1]);
            lo = lo.min(self.eval(a).1).min(self.eval(b).1);
            // The second derivative is linear and vanishes at most once.
            let (ma, mb) = (self.m[i], self.m[i + 1]);
            if ma * mb < 0.0 {
                lo = lo.min(self.eval(a + (b - a) * ma / (ma - mb)).1);
            }
        }
        lo
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    /// Value, first and second derivative. Outside the table the spline is
    /// continued linearly with the end slope.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        let (a, b) = self.domain();
        if t < a {
            let (y, d, _) = self.eval(a);
            return (y + d * (t - a), d, 0.0);
        }
        if t > b {
            let (y, d, _) = self.eval(b);
            return (y + d * (t - b), d, 0.0);
        }
        let k = match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (self.x[k + 1] - t) / h;
        let r = (t - self.x[k]) / h;
        let (m0, m1) = (self.m[k], self.m[k + 1]);
        let (y0, y1) = (self.y[k], self.y[k + 1]);
        let value = m0 * s.powi(3) * h * h / 6.0
            + m1 * r.powi(3) * h * h / 6.0
            + (y0 - m0 * h * h / 6.0) * s
            + (y1 - m1 * h * h / 6.0) * r;
        let d1 = -m0 * s * s * h / 2.0 + m1 * r * r * h / 2.0 + (y1 - y0) / h - (m1 - m0) * h / 6.0;
        let d2 = m0 * s + m1 * r;
        (value, d1, d2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_linear_data_with_consistent_slope() {
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.25).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.5).collect();
        let s = CubicSpline::new(&x, &y, LeftEnd::Slope(2.0)).unwrap();
        for t in [0.0, 0.13, 0.9, 1.7] {
            let (v, d, dd) = s.eval(t);
            assert!((v - (2.0 * t + 0.5)).abs() < 1e-12);
            assert!((d - 2.0).abs() < 1e-12);
            assert!(dd.abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = CubicSpline::new(&x, &y, LeftEnd::Natural).unwrap();
        for t in [0.4, 1.1, 2.5] {
            let h = 1e-6;
            let fd = (s.eval(t + h).0 - s.eval(t - h).0) / (2.0 * h);
            assert!((fd - s.eval(t).1).abs() < 1e-7);
            let fd2 = (s.eval(t + h).1 - s.eval(t - h).1) / (2.0 * h);
            assert!((fd2 - s.eval(t).2).abs() < 1e-5);
        }
    }

    #[test]
    fn min_slope_finds_interior_dips() {
        let s = CubicSpline::new(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 1.0, 2.0], LeftEnd::Natural).unwrap();
        let grid = (0..=3000).map(|k| s.eval(k as f64 / 1000.0).1).fold(f64::INFINITY, f64::min);
        assert!(s.min_slope() <= grid + 1e-12);
        assert!(s.min_slope() < 0.0);
        let line = CubicSpline::new(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0], LeftEnd::Natural).unwrap();
        assert!((line.min_slope() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unsorted_tables() {
        assert!(CubicSpline::new(&[0.0, 2.0, 1.0], &[0.0, 1.0, 2.0], LeftEnd::Natural).is_err());
    }
}
