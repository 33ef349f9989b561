//! Adaptive Gauss–Kronrod (7/15) quadrature.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod rule on `[a, b]`, returning the estimate and the
/// difference to the embedded Gauss rule.
pub fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Integrates `f` over `[a, b]` by recursive bisection until the Kronrod error
/// estimate of every piece is below `max(abs_tol, rel_tol |piece|)` scaled by
/// its share of the interval.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    let mut out = Quadrature { value: 0.0, error: 0.0, evaluations: 0 };
    if a == b {
        return out;
    }
    let width = b - a;
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, e) = kronrod15(&mut f, lo, hi);
        out.evaluations += 15;
        let share = ((hi - lo) / width).abs();
        let allowed = (abs_tol * share).max(rel_tol * v.abs());
        if (e <= allowed && depth >= 1) || depth >= 40 {
            out.value += v;
            out.error += e;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    out
}

/// Sums [`integrate`] over consecutive breakpoints.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], abs_tol: f64, rel_tol: f64) -> Quadrature {
    let mut total = Quadrature { value: 0.0, error: 0.0, evaluations: 0 };
    let n = breaks.len().saturating_sub(1).max(1) as f64;
    for w in breaks.windows(2) {
        let q = integrate(&mut f, w[0], w[1], abs_tol / n, rel_tol);
        total.value += q.value;
        total.error += q.error;
        total.evaluations += q.evaluations;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let (v, _) = kronrod15(&mut |x: f64| x.powi(20) - 3.0 * x.powi(7), -1.0, 2.0);
        let exact = (2f64.powi(21) + 1.0) / 21.0 - 3.0 * (2f64.powi(8) - 1.0) / 8.0;
        assert!((v - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn sharp_peak_is_resolved() {
        let s = 1e-3;
        let q = integrate_pieces(|x: f64| (-0.5 * ((x - 0.3) / s).powi(2)).exp(), &[0.0, 0.29, 0.31, 1.0], 1e-14, 1e-12);
        let exact = s * (2.0 * std::f64::consts::PI).sqrt();
        assert!((q.value - exact).abs() < 1e-10 * exact, "{} vs {}", q.value, exact);
    }

    #[test]
    fn pieces_add_up() {
        let q = integrate_pieces(|x: f64| x.cos(), &[0.0, 0.5, 1.0, 1.5], 1e-13, 1e-13);
        assert!((q.value - 1.5f64.sin()).abs() < 1e-12);
    }
}
