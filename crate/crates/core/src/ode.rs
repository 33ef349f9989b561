//! Dormand–Prince 5(4) integrator with dense output.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-12, h_max: f64::INFINITY, max_steps: 10_000_000 }
    }
}

/// One accepted step with its continuous extension.
#[derive(Clone, Debug)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    pub f0: [f64; N],
    pub f1: [f64; N],
    r: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    /// Fifth-order interpolant at `t` in `[t0, t1]`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        let th = if h == 0.0 { 0.0 } else { (t - self.t0) / h };
        let th1 = 1.0 - th;
        let mut out = [0.0; N];
        for i in 0..N {
            let r = &self.r;
            out[i] = r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])));
        }
        out
    }
}

/// What to do after an accepted step.
pub enum Flow<const N: usize> {
    Continue,
    /// Stop the integration at `t` with state `y` (usually an event).
    Stop(f64, [f64; N]),
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t1`, calling `on_step` after every
/// accepted step. Returns the final time and state.
pub fn integrate<const N: usize, F, S>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    opts: &OdeOptions,
    mut on_step: S,
) -> Result<(f64, [f64; N])>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    S: FnMut(&DenseStep<N>) -> Flow<N>,
{
    if t1 <= t0 {
        return Ok((t0, y0));
    }
    let span = t1 - t0;
    let mut t = t0;
    let mut y = y0;
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, &y);
    let scale = |a: &[f64; N], b: &[f64; N], i: usize| opts.atol + opts.rtol * a[i].abs().max(b[i].abs());
    // Initial step from the size of y and y'.
    let (mut d0, mut d1) = (0.0, 0.0);
    for i in 0..N {
        let sc = scale(&y, &y, i);
        d0 += (y[i] / sc).powi(2);
        d1 += (k[0][i] / sc).powi(2);
    }
    let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
    h = h.min(opts.h_max).min(span);
    let mut steps = 0;
    let mut rejected_in_row = 0;
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(Error::SimulationFailure(format!("step limit {} reached at t = {t:e}", opts.max_steps)));
        }
        steps += 1;
        let last = t + h >= t1 || (t1 - (t + h)) < 1e-12 * span;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            let mut ys = y;
            for i in 0..N {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                ys[i] += h * acc;
            }
            k[s] = f(t + C[s] * h, &ys);
        }
        let mut y_new = y;
        for i in 0..N {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += A[6][j] * k[j][i];
            }
            y_new[i] += h * acc;
        }
        let mut err = 0.0;
        for i in 0..N {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * k[j][i];
            }
            err += (h * e / scale(&y, &y_new, i)).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            h *= 0.1;
            rejected_in_row += 1;
            if rejected_in_row > 50 || h < 1e-15 * span {
                return Err(Error::SimulationFailure(format!("non-finite derivative near t = {t:e}")));
            }
            continue;
        }
        let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
        if err <= 1.0 {
            rejected_in_row = 0;
            let t_new = t + h;
            let mut r = [[0.0; N]; 5];
            for i in 0..N {
                let dy = y_new[i] - y[i];
                let bspl = h * k[0][i] - dy;
                r[0][i] = y[i];
                r[1][i] = dy;
                r[2][i] = bspl;
                r[3][i] = dy - h * k[6][i] - bspl;
                let mut acc = 0.0;
                for j in 0..7 {
                    acc += D[j] * k[j][i];
                }
                r[4][i] = h * acc;
            }
            let step = DenseStep { t0: t, t1: t_new, y0: y, y1: y_new, f0: k[0], f1: k[6], r };
            match on_step(&step) {
                Flow::Continue => {}
                Flow::Stop(te, ye) => return Ok((te, ye)),
            }
            t = t_new;
            y = y_new;
            k[0] = k[6];
            h = (h * factor).min(opts.h_max);
        } else {
            h *= factor.min(1.0);
            rejected_in_row += 1;
            if h < 1e-15 * span.max(t.abs()) {
                return Err(Error::SimulationFailure(format!("step size underflow at t = {t:e}")));
            }
        }
    }
    Ok((t, y))
}

/// Root of `g` on `[a, b]` given a sign change, by bisection with a secant start.
pub fn find_root<G: FnMut(f64) -> f64>(mut g: G, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut ga = g(a);
    let gb = g(b);
    if ga == 0.0 {
        return a;
    }
    if gb == 0.0 {
        return b;
    }
    // Illinois variant of regula falsi.
    let mut gb = gb;
    let mut side = 0;
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c.is_finite() && c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let gc = g(c);
        if gc == 0.0 {
            return c;
        }
        if (gc > 0.0) == (gb > 0.0) {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}
