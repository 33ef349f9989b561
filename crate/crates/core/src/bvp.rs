//! Two-point boundary value problems by three-stage Lobatto IIIA collocation.
//!
//! The solution is a C¹ piecewise cubic. On each mesh interval the collocation
//! conditions reduce to the Hermite–Simpson residual
//!
//! ```text
//! y_m = (y_j + y_{j+1}) / 2 - h (f_{j+1} - f_j) / 8
//! r_j = y_{j+1} - y_j - h (f_j + 4 f(y_m) + f_{j+1}) / 6
//! ```
//!
//! which is solved together with separated boundary conditions by a damped
//! Newton iteration on a banded system. The mesh is refined where the RMS of
//! the scaled defect `s' - f(s)` of the cubic exceeds the tolerance.
//!
//! ```
//! use softland::bvp::{solve, BvpOptions, BvpSystem};
//!
//! // y'' = -y, y(0) = 0, y(pi/2) = 1.
//! struct Oscillator;
//! impl BvpSystem for Oscillator {
//!     fn dim(&self) -> usize { 2 }
//!     fn left_count(&self) -> usize { 1 }
//!     fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
//!         dy[0] = y[1];
//!         dy[1] = -y[0];
//!     }
//!     fn bc_left(&self, ya: &[f64], r: &mut [f64]) { r[0] = ya[0]; }
//!     fn bc_right(&self, yb: &[f64], r: &mut [f64]) { r[0] = yb[0] - 1.0; }
//! }
//!
//! let x: Vec<f64> = (0..11).map(|k| k as f64 * std::f64::consts::FRAC_PI_2 / 10.0).collect();
//! let y = vec![0.0; 22];
//! let sol = solve(&Oscillator, x, y, &BvpOptions { tol: 1e-8, ..Default::default() }).unwrap();
//! assert!((sol.eval(1.0)[0] - 1f64.sin()).abs() < 1e-7);
//! ```

use crate::banded::BandMatrix;

/// A first-order system `y' = f(t, y)` with `left_count` conditions at the
/// left end and `dim - left_count` at the right end.
pub trait BvpSystem {
    fn dim(&self) -> usize;
    fn left_count(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
    fn bc_left(&self, ya: &[f64], r: &mut [f64]);
    fn bc_right(&self, yb: &[f64], r: &mut [f64]);

    /// Row-major Jacobian `jac[i * n + j] = ∂f_i/∂y_j`. Forward differences by default.
    fn jacobian(&self, t: f64, y: &[f64], f0: &[f64], jac: &mut [f64]) {
        let n = self.dim();
        let mut yp = y.to_vec();
        let mut fp = vec![0.0; n];
        for j in 0..n {
            let h = f64::EPSILON.sqrt() * (1.0 + y[j].abs());
            yp[j] = y[j] + h;
            let h = yp[j] - y[j];
            self.rhs(t, &yp, &mut fp);
            for i in 0..n {
                jac[i * n + j] = (fp[i] - f0[i]) / h;
            }
            yp[j] = y[j];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvpOptions {
    /// Bound on the scaled RMS defect per interval.
    pub tol: f64,
    /// Bound on each boundary-condition residual.
    pub bc_tol: f64,
    pub max_nodes: usize,
    /// Newton iterations per mesh.
    pub max_newton: usize,
    /// Jacobian evaluations per mesh.
    pub max_jacobians: usize,
    /// Smallest step fraction tried by the line search.
    pub min_damping: f64,
    /// Newton/refinement rounds before giving up.
    pub max_rounds: usize,
    /// Extra Newton passes on an unchanged mesh while the defect keeps
    /// shrinking quickly. Zero refines after every unconverged pass.
    pub newton_retries: usize,
    /// Unconverged rounds in a row that fail to halve the defect before the
    /// solve is abandoned.
    pub max_stalls: usize,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            bc_tol: 1e-6,
            max_nodes: 100_000,
            max_newton: 8,
            max_jacobians: 4,
            min_damping: 1.0 / 64.0,
            max_rounds: 60,
            newton_retries: 3,
            max_stalls: 3,
        }
    }
}

/// A collocation solution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BvpSolution {
    pub x: Vec<f64>,
    /// Node values, `dim` per node.
    pub y: Vec<f64>,
    /// `f(x, y)` at the nodes.
    pub f: Vec<f64>,
    pub dim: usize,
    /// Scaled RMS defect per interval.
    pub rms_residuals: Vec<f64>,
    pub bc_residual: f64,
    pub newton_iterations: usize,
    pub mesh_history: Vec<usize>,
}

impl BvpSolution {
    pub fn nodes(&self) -> usize {
        self.x.len()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.y[j * self.dim..(j + 1) * self.dim]
    }

    pub fn max_residual(&self) -> f64 {
        self.rms_residuals.iter().cloned().fold(0.0, f64::max)
    }

    /// Value of the cubic interpolant.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        eval_cubic(&self.x, &self.y, &self.f, self.dim, t).0
    }

    /// Derivative of the cubic interpolant.
    pub fn eval_derivative(&self, t: f64) -> Vec<f64> {
        eval_cubic(&self.x, &self.y, &self.f, self.dim, t).1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BvpFailure {
    /// The requested mesh would exceed `max_nodes`.
    MeshLimit { needed: usize, last: BvpSolution },
    /// The Newton matrix was singular.
    Singular { last: BvpSolution },
    /// Residuals stayed above tolerance after `max_rounds`.
    NoConvergence { last: BvpSolution },
}

impl BvpFailure {
    pub fn last(&self) -> &BvpSolution {
        match self {
            BvpFailure::MeshLimit { last, .. } | BvpFailure::Singular { last } | BvpFailure::NoConvergence { last } => last,
        }
    }
}

fn locate(x: &[f64], t: f64) -> usize {
    match x.partition_point(|&v| v <= t) {
        0 => 0,
        p => (p - 1).min(x.len() - 2),
    }
}

/// Value and slope at fraction `s` of an interval of width `h` of the cubic
/// Hermite interpolant through `(y0, f0)` and `(y1, f1)`.
#[inline]
fn hermite(h: f64, s: f64, y0: f64, y1: f64, f0: f64, f1: f64) -> (f64, f64) {
    let (s2, s3) = (s * s, s * s * s);
    let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * f0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * f1;
    let d = (6.0 * s2 - 6.0 * s) * (y0 - y1) / h + (3.0 * s2 - 4.0 * s + 1.0) * f0 + (3.0 * s2 - 2.0 * s) * f1;
    (v, d)
}

fn eval_cubic(x: &[f64], y: &[f64], f: &[f64], n: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let k = locate(x, t);
    let h = x[k + 1] - x[k];
    let s = (t - x[k]) / h;
    let mut v = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        (v[i], d[i]) = hermite(h, s, y[k * n + i], y[(k + 1) * n + i], f[k * n + i], f[(k + 1) * n + i]);
    }
    (v, d)
}

/// Removes interior nodes that the cubic through their neighbours already
/// reproduces, so a mesh refined for one problem does not carry its density
/// into the next. A node goes when both its value and its slope are matched to
/// `fraction * tol` in the scaled measure the solver uses. Returns the kept
/// node indices.
pub fn coarsen(x: &[f64], y: &[f64], f: &[f64], n: usize, tol: f64, fraction: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..x.len()).collect();
    loop {
        let mut next = Vec::with_capacity(keep.len());
        next.push(keep[0]);
        let mut j = 1;
        while j + 1 < keep.len() {
            let (a, c, b) = (*next.last().unwrap(), keep[j], keep[j + 1]);
            let h = x[b] - x[a];
            let s = (x[c] - x[a]) / h;
            let removable = (0..n).all(|i| {
                let (v, d) = hermite(h, s, y[a * n + i], y[b * n + i], f[a * n + i], f[b * n + i]);
                let scale = 1.0 + f[c * n + i].abs();
                (d - f[c * n + i]).abs() <= fraction * tol * scale && (v - y[c * n + i]).abs() <= fraction * tol * h * scale
            });
            if removable {
                next.push(b);
                j += 2;
            } else {
                next.push(c);
                j += 1;
            }
        }
        if j < keep.len() {
            next.push(keep[keep.len() - 1]);
        }
        if next.len() == keep.len() {
            return keep;
        }
        keep = next;
    }
}

/// Everything the Newton iteration needs about the current iterate.
struct Residuals {
    f: Vec<f64>,
    f_mid: Vec<f64>,
    y_mid: Vec<f64>,
    /// Left BCs, interval residuals, right BCs.
    res: Vec<f64>,
}

fn residuals<S: BvpSystem + ?Sized>(sys: &S, x: &[f64], y: &[f64]) -> Residuals {
    let n = sys.dim();
    let k = sys.left_count();
    let m = x.len();
    let mut f = vec![0.0; m * n];
    for j in 0..m {
        sys.rhs(x[j], &y[j * n..(j + 1) * n], &mut f[j * n..(j + 1) * n]);
    }
    let mut y_mid = vec![0.0; (m - 1) * n];
    let mut f_mid = vec![0.0; (m - 1) * n];
    let mut res = vec![0.0; m * n];
    sys.bc_left(&y[..n], &mut res[..k]);
    for j in 0..m - 1 {
        let h = x[j + 1] - x[j];
        for i in 0..n {
            let (a, b) = (j * n + i, (j + 1) * n + i);
            y_mid[j * n + i] = 0.5 * (y[a] + y[b]) - 0.125 * h * (f[b] - f[a]);
        }
        sys.rhs(x[j] + 0.5 * h, &y_mid[j * n..(j + 1) * n], &mut f_mid[j * n..(j + 1) * n]);
        for i in 0..n {
            let (a, b) = (j * n + i, (j + 1) * n + i);
            res[k + j * n + i] = y[b] - y[a] - h / 6.0 * (f[a] + 4.0 * f_mid[j * n + i] + f[b]);
        }
    }
    sys.bc_right(&y[(m - 1) * n..], &mut res[k + (m - 1) * n..]);
    Residuals { f, f_mid, y_mid, res }
}

fn bc_jacobian(n: usize, count: usize, y: &[f64], bc: &dyn Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let mut r0 = vec![0.0; count];
    bc(y, &mut r0);
    let mut jac = vec![0.0; count * n];
    let mut yp = y.to_vec();
    let mut rp = vec![0.0; count];
    for j in 0..n {
        let h = f64::EPSILON.sqrt() * (1.0 + y[j].abs());
        yp[j] = y[j] + h;
        let h = yp[j] - y[j];
        bc(&yp, &mut rp);
        for i in 0..count {
            jac[i * n + j] = (rp[i] - r0[i]) / h;
        }
        yp[j] = y[j];
    }
    jac
}

fn newton_matrix<S: BvpSystem + ?Sized>(sys: &S, x: &[f64], y: &[f64], r: &Residuals) -> BandMatrix {
    let n = sys.dim();
    let k = sys.left_count();
    let m = x.len();
    let mut a = BandMatrix::zeros(m * n, k + n - 1, 2 * n - 1 - k);
    let mut jn = vec![0.0; m * n * n];
    for j in 0..m {
        sys.jacobian(x[j], &y[j * n..(j + 1) * n], &r.f[j * n..(j + 1) * n], &mut jn[j * n * n..(j + 1) * n * n]);
    }
    let left = bc_jacobian(n, k, &y[..n], &|ya, out| sys.bc_left(ya, out));
    for i in 0..k {
        for c in 0..n {
            a.set(i, c, left[i * n + c]);
        }
    }
    let mut jm = vec![0.0; n * n];
    for j in 0..m - 1 {
        let h = x[j + 1] - x[j];
        sys.jacobian(x[j] + 0.5 * h, &r.y_mid[j * n..(j + 1) * n], &r.f_mid[j * n..(j + 1) * n], &mut jm);
        let j0 = &jn[j * n * n..(j + 1) * n * n];
        let j1 = &jn[(j + 1) * n * n..(j + 2) * n * n];
        for i in 0..n {
            let row = k + j * n + i;
            for c in 0..n {
                let mut p0 = 0.0;
                let mut p1 = 0.0;
                for l in 0..n {
                    p0 += jm[i * n + l] * j0[l * n + c];
                    p1 += jm[i * n + l] * j1[l * n + c];
                }
                let delta = if i == c { 1.0 } else { 0.0 };
                let d0 = -delta - h / 6.0 * (j0[i * n + c] + 2.0 * jm[i * n + c]) - h * h / 12.0 * p0;
                let d1 = delta - h / 6.0 * (j1[i * n + c] + 2.0 * jm[i * n + c]) + h * h / 12.0 * p1;
                a.set(row, j * n + c, d0);
                a.set(row, (j + 1) * n + c, d1);
            }
        }
    }
    let right = bc_jacobian(n, n - k, &y[(m - 1) * n..], &|yb, out| sys.bc_right(yb, out));
    for i in 0..n - k {
        for c in 0..n {
            a.set(k + (m - 1) * n + i, (m - 1) * n + c, right[i * n + c]);
        }
    }
    a
}

fn converged(x: &[f64], r: &Residuals, n: usize, k: usize, tol: f64, bc_tol: f64) -> bool {
    let m = x.len();
    for j in 0..m - 1 {
        let h = x[j + 1] - x[j];
        let tol_r = 2.0 / 3.0 * h * 5e-2 * tol;
        for i in 0..n {
            if !(r.res[k + j * n + i].abs() < tol_r * (1.0 + r.f_mid[j * n + i].abs())) {
                return false;
            }
        }
    }
    bc_norm(&r.res, n, k, m) <= bc_tol
}

/// Largest collocation residual relative to its convergence threshold.
fn defect(x: &[f64], r: &Residuals, n: usize, k: usize, tol: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..x.len() - 1 {
        let tol_r = 2.0 / 3.0 * (x[j + 1] - x[j]) * 5e-2 * tol;
        for i in 0..n {
            let e = r.res[k + j * n + i].abs() / (tol_r * (1.0 + r.f_mid[j * n + i].abs()));
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
    }
    worst
}

fn bc_norm(res: &[f64], n: usize, k: usize, m: usize) -> f64 {
    res[..k].iter().chain(&res[k + (m - 1) * n..]).fold(0.0, |a, b| a.max(b.abs()))
}

struct NewtonOutcome {
    y: Vec<f64>,
    iterations: usize,
    singular: bool,
}

fn newton<S: BvpSystem + ?Sized>(sys: &S, x: &[f64], mut y: Vec<f64>, opts: &BvpOptions) -> NewtonOutcome {
    let n = sys.dim();
    let k = sys.left_count();
    const ARMIJO: f64 = 0.2;
    let mut r = residuals(sys, x, &y);
    let mut lu = None;
    let mut step = Vec::new();
    let mut cost = 0.0;
    let mut jacobians = 0;
    let mut iterations = 0;
    for _ in 0..opts.max_newton {
        if lu.is_none() {
            match newton_matrix(sys, x, &y, &r).factor() {
                Ok(f) => lu = Some(f),
                Err(_) => return NewtonOutcome { y, iterations, singular: true },
            }
            jacobians += 1;
            step = r.res.clone();
            lu.as_ref().unwrap().solve(&mut step);
            cost = step.iter().map(|v| v * v).sum();
        }
        iterations += 1;
        let factors = lu.as_ref().unwrap();
        let mut alpha = 1.0;
        let (mut y_new, mut r_new, mut step_new, mut cost_new);
        loop {
            y_new = y.iter().zip(&step).map(|(a, s)| a - alpha * s).collect::<Vec<_>>();
            r_new = residuals(sys, x, &y_new);
            step_new = r_new.res.clone();
            factors.solve(&mut step_new);
            cost_new = step_new.iter().map(|v| v * v).sum::<f64>();
            if cost_new < (1.0 - 2.0 * alpha * ARMIJO) * cost || alpha * 0.5 < opts.min_damping {
                break;
            }
            alpha *= 0.5;
        }
        y = y_new;
        r = r_new;
        if jacobians == opts.max_jacobians && alpha < 1.0 {
            break;
        }
        if converged(x, &r, n, k, opts.tol, opts.bc_tol) {
            break;
        }
        if alpha == 1.0 && cost_new.is_finite() {
            step = step_new;
            cost = cost_new;
        } else {
            lu = None;
            if jacobians == opts.max_jacobians {
                break;
            }
        }
    }
    NewtonOutcome { y, iterations, singular: false }
}

/// RMS of the defect `s' - f(s)` over each interval, normalized componentwise by `1 + |f|`.
fn rms_residuals<S: BvpSystem + ?Sized>(sys: &S, x: &[f64], y: &[f64], r: &Residuals) -> Vec<f64> {
    let n = sys.dim();
    let m = x.len();
    let k = sys.left_count();
    let offset = 0.5 * (3.0f64 / 7.0).sqrt();
    let mut out = vec![0.0; m - 1];
    let mut fp = vec![0.0; n];
    for j in 0..m - 1 {
        let h = x[j + 1] - x[j];
        let mut r_mid = 0.0;
        for i in 0..n {
            let v = 1.5 * r.res[k + j * n + i] / h / (1.0 + r.f_mid[j * n + i].abs());
            r_mid += v * v;
        }
        let mut side = 0.0;
        for t in [x[j] + (0.5 - offset) * h, x[j] + (0.5 + offset) * h] {
            let (v, d) = eval_cubic(x, y, &r.f, n, t);
            sys.rhs(t, &v, &mut fp);
            for i in 0..n {
                let e = (d[i] - fp[i]) / (1.0 + fp[i].abs());
                side += e * e;
            }
        }
        out[j] = (0.5 * (32.0 / 45.0 * r_mid + 49.0 / 90.0 * side)).sqrt();
    }
    out
}

fn snapshot(x: &[f64], y: &[f64], r: &Residuals, n: usize, k: usize, rms: Vec<f64>, iters: usize, history: &[usize]) -> BvpSolution {
    BvpSolution {
        x: x.to_vec(),
        y: y.to_vec(),
        f: r.f.clone(),
        dim: n,
        rms_residuals: rms,
        bc_residual: bc_norm(&r.res, n, k, x.len()),
        newton_iterations: iters,
        mesh_history: history.to_vec(),
    }
}

/// Solves the BVP starting from node values `y` (`dim` per node) on mesh `x`.
pub fn solve<S: BvpSystem + ?Sized>(sys: &S, mut x: Vec<f64>, mut y: Vec<f64>, opts: &BvpOptions) -> Result<BvpSolution, BvpFailure> {
    let n = sys.dim();
    let k = sys.left_count();
    assert!(x.len() >= 2 && y.len() == x.len() * n, "initial mesh and guess do not match");
    assert!(k <= n);
    let mut history = vec![x.len()];
    let mut total_iters = 0;
    let mut retries = 0;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for _ in 0..opts.max_rounds {
        let before = defect(&x, &residuals(sys, &x, &y), n, k, opts.tol);
        let out = newton(sys, &x, y, opts);
        y = out.y;
        total_iters += out.iterations;
        let r = residuals(sys, &x, &y);
        if out.singular {
            let rms = vec![f64::INFINITY; x.len() - 1];
            return Err(BvpFailure::Singular { last: snapshot(&x, &y, &r, n, k, rms, total_iters, &history) });
        }
        let rms = rms_residuals(sys, &x, &y, &r);
        let ok_newton = converged(&x, &r, n, k, opts.tol, opts.bc_tol);
        let after = defect(&x, &r, n, k, opts.tol);
        if ok_newton {
            best = f64::INFINITY;
            stalled = 0;
        } else {
            // Refining around an unconverged iterate inserts nodes almost
            // everywhere; give Newton another pass first if it is still gaining.
            if retries < opts.newton_retries && after < 0.1 * before {
                retries += 1;
                continue;
            }
            if after < 0.5 * best {
                best = after;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= opts.max_stalls {
                    return Err(BvpFailure::NoConvergence { last: snapshot(&x, &y, &r, n, k, rms, total_iters, &history) });
                }
            }
        }
        retries = 0;
        let mut insert = Vec::with_capacity(x.len());
        let mut added = 0;
        for &e in rms.iter() {
            // NaN counts as a large residual.
            let pieces = if !(e <= opts.tol) {
                if e < 100.0 * opts.tol {
                    2
                } else {
                    3
                }
            } else {
                1
            };
            added += pieces - 1;
            insert.push(pieces);
        }
        if added == 0 {
            if ok_newton {
                return Ok(snapshot(&x, &y, &r, n, k, rms, total_iters, &history));
            }
            continue;
        }
        if x.len() + added > opts.max_nodes {
            return Err(BvpFailure::MeshLimit {
                needed: x.len() + added,
                last: snapshot(&x, &y, &r, n, k, rms, total_iters, &history),
            });
        }
        let mut x_new = Vec::with_capacity(x.len() + added);
        let mut y_new = Vec::with_capacity((x.len() + added) * n);
        for (j, &pieces) in insert.iter().enumerate() {
            x_new.push(x[j]);
            y_new.extend_from_slice(&y[j * n..(j + 1) * n]);
            for p in 1..pieces {
                let t = x[j] + (x[j + 1] - x[j]) * p as f64 / pieces as f64;
                x_new.push(t);
                y_new.extend(eval_cubic(&x, &y, &r.f, n, t).0);
            }
        }
        let m = x.len();
        x_new.push(x[m - 1]);
        y_new.extend_from_slice(&y[(m - 1) * n..]);
        x = x_new;
        y = y_new;
        history.push(x.len());
    }
    let r = residuals(sys, &x, &y);
    let rms = rms_residuals(sys, &x, &y, &r);
    Err(BvpFailure::NoConvergence { last: snapshot(&x, &y, &r, n, k, rms, total_iters, &history) })
}

/// Solves on a fixed mesh without refinement; used to measure convergence order.
pub fn solve_fixed_mesh<S: BvpSystem + ?Sized>(sys: &S, x: Vec<f64>, y: Vec<f64>, opts: &BvpOptions) -> Result<BvpSolution, BvpFailure> {
    let n = sys.dim();
    let k = sys.left_count();
    let out = newton(sys, &x, y, opts);
    let r = residuals(sys, &x, &out.y);
    let rms = rms_residuals(sys, &x, &out.y, &r);
    let sol = snapshot(&x, &out.y, &r, n, k, rms, out.iterations, &[x.len()]);
    if out.singular {
        return Err(BvpFailure::Singular { last: sol });
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn coarsen_thins_cubics_and_keeps_curved_data() {
        let x: Vec<f64> = (0..41).map(|k| k as f64 / 40.0).collect();
        let y: Vec<f64> = x.iter().map(|t| t * t * t - t).collect();
        let f: Vec<f64> = x.iter().map(|t| 3.0 * t * t - 1.0).collect();
        let kept = coarsen(&x, &y, &f, 1, 1e-6, 0.1);
        assert_eq!((kept[0], *kept.last().unwrap()), (0, 40));
        assert!(kept.len() <= 3, "{kept:?}");

        let y: Vec<f64> = x.iter().map(|t| (20.0 * t).sin()).collect();
        let f: Vec<f64> = x.iter().map(|t| 20.0 * (20.0 * t).cos()).collect();
        assert_eq!(coarsen(&x, &y, &f, 1, 1e-10, 0.1).len(), 41);
    }

    struct Oscillator;
    impl BvpSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn left_count(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
        fn bc_left(&self, ya: &[f64], r: &mut [f64]) {
            r[0] = ya[0];
        }
        fn bc_right(&self, yb: &[f64], r: &mut [f64]) {
            r[0] = yb[0] - 1.0;
        }
    }

    fn uniform(m: usize) -> Vec<f64> {
        (0..m).map(|k| FRAC_PI_2 * k as f64 / (m - 1) as f64).collect()
    }

    fn max_error(sol: &BvpSolution) -> f64 {
        (0..=400)
            .map(|k| {
                let t = FRAC_PI_2 * k as f64 / 400.0;
                (sol.eval(t)[0] - t.sin()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn oscillator_to_high_accuracy() {
        let opts = BvpOptions { tol: 1e-10, bc_tol: 1e-12, ..Default::default() };
        let sol = solve(&Oscillator, uniform(5), vec![0.0; 10], &opts).unwrap();
        assert!(max_error(&sol) < 1e-8, "error {}", max_error(&sol));
    }

    #[test]
    fn fourth_order_on_fixed_meshes() {
        let opts = BvpOptions { tol: 1e-14, bc_tol: 1e-14, ..Default::default() };
        let err = |m: usize| {
            let sol = solve_fixed_mesh(&Oscillator, uniform(m), vec![0.0; 2 * m], &opts).unwrap();
            sol.x.iter().map(|&t| (sol.eval(t)[0] - t.sin()).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(9), err(17));
        let order = (e1 / e2).log2();
        assert!(order > 3.5, "order {order} from {e1:e} and {e2:e}");
    }

    struct Stiff;
    impl BvpSystem for Stiff {
        fn dim(&self) -> usize {
            2
        }
        fn left_count(&self) -> usize {
            1
        }
        // eps y'' = y, boundary layers at both ends.
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = y[0] / 1e-4;
        }
        fn bc_left(&self, ya: &[f64], r: &mut [f64]) {
            r[0] = ya[0] - 1.0;
        }
        fn bc_right(&self, yb: &[f64], r: &mut [f64]) {
            r[0] = yb[0] - 1.0;
        }
    }

    #[test]
    fn mesh_is_refined_into_boundary_layers() {
        let x: Vec<f64> = (0..11).map(|k| k as f64 / 10.0).collect();
        let sol = solve(&Stiff, x, vec![1.0, 0.0].repeat(11), &BvpOptions::default()).unwrap();
        assert!(sol.nodes() > 11);
        let t = 0.05;
        let exact = (-t / 1e-2_f64).exp() + ((t - 1.0) / 1e-2).exp();
        assert!((sol.eval(t)[0] - exact).abs() < 1e-3);
        assert!(sol.max_residual() <= 1e-3);
    }

    #[test]
    fn mesh_limit_is_reported() {
        let x: Vec<f64> = (0..11).map(|k| k as f64 / 10.0).collect();
        let opts = BvpOptions { max_nodes: 15, ..Default::default() };
        let err = solve(&Stiff, x, vec![1.0, 0.0].repeat(11), &opts).unwrap_err();
        assert!(matches!(err, BvpFailure::MeshLimit { .. }));
    }
}
