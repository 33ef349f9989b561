//! Lumped-parameter model of a short-stroke reluctance actuator.
//!
//! The state is `(z, v, alpha)`: armature gap, velocity and magnetic flux.
//! Dynamics are affine in the coil voltage `u`,
//!
//! ```text
//! x' = f(x) + G(x) u
//! ```
//!
//! and [`ActuatorParams::drift`] / [`ActuatorParams::input_gain`] return the two
//! parts separately because the optimal-control layer needs the split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::{CubicSpline, LeftEnd};

/// Fraction of the saturation flux `1/k_2` that states may use.
pub const FLUX_MARGIN: f64 = 0.95;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Gap (m).
    pub z: f64,
    /// Velocity (m/s).
    pub v: f64,
    /// Magnetic flux (Wb).
    pub alpha: f64,
}

impl State {
    pub fn new(z: f64, v: f64, alpha: f64) -> Self {
        Self { z, v, alpha }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.z, self.v, self.alpha]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self { z: x[0], v: x[1], alpha: x[2] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StateDerivative {
    pub dz: f64,
    pub dv: f64,
    pub dalpha: f64,
}

impl StateDerivative {
    pub fn to_array(self) -> [f64; 3] {
        [self.dz, self.dv, self.dalpha]
    }
}

/// Input column `G(x)`; the position row is always zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InputGain {
    pub v: f64,
    pub alpha: f64,
}

/// Value and first two derivatives of a scalar function.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Tabulated reluctance curves. The core curve is given for `alpha >= 0`
/// starting at zero flux and mirrored to negative flux.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedReluctance {
    gap: CubicSpline,
    core: CubicSpline,
    gap_table: (Vec<f64>, Vec<f64>),
    core_table: (Vec<f64>, Vec<f64>),
}

impl TabulatedReluctance {
    pub fn new(gap_z: &[f64], gap_r: &[f64], core_alpha: &[f64], core_r: &[f64]) -> Result<Self> {
        if core_alpha.first() != Some(&0.0) {
            return Err(Error::invalid("core reluctance table must start at zero flux"));
        }
        if gap_r.iter().chain(core_r).any(|r| *r < 0.0) {
            return Err(Error::invalid("reluctance tables must be non-negative"));
        }
        let gap = CubicSpline::new(gap_z, gap_r, LeftEnd::Natural)?;
        if !(gap.min_slope() > 0.0) {
            return Err(Error::invalid("gap reluctance table must give a strictly increasing curve"));
        }
        // Zero slope at the origin keeps the mirrored curve differentiable.
        let core = CubicSpline::new(core_alpha, core_r, LeftEnd::Slope(0.0))?;
        Ok(Self {
            gap,
            core,
            gap_table: (gap_z.to_vec(), gap_r.to_vec()),
            core_table: (core_alpha.to_vec(), core_r.to_vec()),
        })
    }

    pub fn gap_table(&self) -> (&[f64], &[f64]) {
        (&self.gap_table.0, &self.gap_table.1)
    }

    pub fn core_table(&self) -> (&[f64], &[f64]) {
        (&self.core_table.0, &self.core_table.1)
    }
}

/// Magnetic reluctance family: a gap term depending on position and a core
/// term depending on flux.
#[derive(Clone, Debug, PartialEq)]
pub enum Reluctance {
    /// `R_g(z) = gap_slope * z`, `R_c(alpha) = k1 / (1 - (k2 alpha)^2)`.
    SaturableCore { k1: f64, k2: f64, gap_slope: f64 },
    Tabulated(TabulatedReluctance),
}

impl Reluctance {
    pub fn gap(&self, z: f64) -> Jet {
        match self {
            Reluctance::SaturableCore { gap_slope, .. } => Jet { value: gap_slope * z, d1: *gap_slope, d2: 0.0 },
            Reluctance::Tabulated(t) => {
                let (value, d1, d2) = t.gap.eval(z);
                Jet { value, d1, d2 }
            }
        }
    }

    pub fn core(&self, alpha: f64) -> Jet {
        match self {
            Reluctance::SaturableCore { k1, k2, .. } => {
                let s = (k2 * alpha).powi(2);
                let d = 1.0 - s;
                Jet {
                    value: k1 / d,
                    d1: 2.0 * k1 * k2 * k2 * alpha / (d * d),
                    d2: 2.0 * k1 * k2 * k2 * (1.0 + 3.0 * s) / (d * d * d),
                }
            }
            Reluctance::Tabulated(t) => {
                let (value, d1, d2) = t.core.eval(alpha.abs());
                Jet { value, d1: d1 * alpha.signum(), d2 }
            }
        }
    }

    /// Largest admissible |alpha|.
    pub fn flux_limit(&self) -> f64 {
        match self {
            Reluctance::SaturableCore { k2, .. } => FLUX_MARGIN / k2,
            Reluctance::Tabulated(t) => t.core.domain().1,
        }
    }
}

/// Physical constants of the actuator.
#[derive(Clone, Debug, PartialEq)]
pub struct ActuatorParams {
    /// Coil resistance R (ohm).
    pub resistance: f64,
    /// Coil turns N.
    pub coil_turns: f64,
    /// Moving mass m (kg).
    pub mass: f64,
    /// Spring stiffness k_s (N/m).
    pub spring_stiffness: f64,
    /// Spring equilibrium position z_s (m).
    pub spring_rest: f64,
    /// Viscous friction c_f (N s/m).
    pub friction: f64,
    /// Eddy-current constant k_ec (1/ohm).
    pub eddy: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub reluctance: Reluctance,
}

impl ActuatorParams {
    /// The commercial solenoid valve used throughout the examples.
    pub fn reference_valve() -> Self {
        Self {
            resistance: 50.0,
            coil_turns: 1.20e3,
            mass: 1.63e-3,
            spring_stiffness: 6.18e1,
            spring_rest: 1.92e-2,
            friction: 8.06e-1,
            eddy: 1.63e3,
            z_min: 3.99e-4,
            z_max: 1.60e-3,
            reluctance: Reluctance::SaturableCore { k1: 4.41e6, k2: 3.80e4, gap_slope: DEFAULT_GAP_SLOPE },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("R", self.resistance),
            ("N", self.coil_turns),
            ("m", self.mass),
            ("k_s", self.spring_stiffness),
            ("c_f", self.friction),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {value}")));
            }
        }
        if !(self.eddy >= 0.0 && self.eddy.is_finite()) {
            return Err(Error::invalid(format!("k_ec must be non-negative, got {}", self.eddy)));
        }
        if !(self.z_min < self.z_max) || !self.z_min.is_finite() || !self.z_max.is_finite() {
            return Err(Error::invalid(format!("need z_min < z_max, got {} and {}", self.z_min, self.z_max)));
        }
        match &self.reluctance {
            Reluctance::SaturableCore { k1, k2, gap_slope } => {
                if !(*k1 > 0.0 && *k2 > 0.0 && *gap_slope > 0.0) {
                    return Err(Error::invalid("k_1, k_2 and gap_slope must be positive"));
                }
            }
            Reluctance::Tabulated(_) => {
                // Sample the gap curve densely: it must be non-negative and increasing.
                let n = 1000;
                let mut prev = f64::NEG_INFINITY;
                for k in 0..=n {
                    let z = self.z_min + (self.z_max - self.z_min) * k as f64 / n as f64;
                    let g = self.reluctance.gap(z);
                    if g.value < 0.0 || g.d1 <= 0.0 || g.value <= prev {
                        return Err(Error::invalid(format!("gap reluctance must be increasing and non-negative (z = {z:e})")));
                    }
                    prev = g.value;
                }
            }
        }
        Ok(())
    }

    /// `N^2 + R k_ec`, the common denominator of the flux equation.
    fn flux_denominator(&self) -> f64 {
        self.coil_turns * self.coil_turns + self.resistance * self.eddy
    }

    /// Rejects states whose flux approaches the saturable-core pole.
    pub fn check_state(&self, s: &State) -> Result<()> {
        let limit = self.reluctance.flux_limit();
        if !(s.alpha.abs() < limit) {
            return Err(Error::FluxOutOfRange { alpha: s.alpha, limit });
        }
        Ok(())
    }

    /// Total reluctance `R_c(alpha) + R_g(z)`.
    pub fn total_reluctance(&self, z: f64, alpha: f64) -> f64 {
        self.reluctance.core(alpha).value + self.reluctance.gap(z).value
    }

    /// Acceleration `f_v(z, v, alpha)`.
    pub fn acceleration(&self, z: f64, v: f64, alpha: f64) -> f64 {
        let spring = self.spring_stiffness * (self.spring_rest - z);
        let magnetic = 0.5 * self.reluctance.gap(z).d1 * alpha * alpha;
        (spring - self.friction * v - magnetic) / self.mass
    }

    /// Unforced part `f(x)` of the dynamics.
    pub fn drift(&self, s: &State) -> StateDerivative {
        StateDerivative {
            dz: s.v,
            dv: self.acceleration(s.z, s.v, s.alpha),
            dalpha: -self.resistance * self.total_reluctance(s.z, s.alpha) * s.alpha / self.flux_denominator(),
        }
    }

    /// Input column `G(x)`.
    pub fn input_gain(&self, _s: &State) -> InputGain {
        InputGain { v: 0.0, alpha: self.coil_turns / self.flux_denominator() }
    }

    /// `f(x) + G(x) u`.
    pub fn dynamics(&self, s: &State, u: f64) -> StateDerivative {
        let mut d = self.drift(s);
        let g = self.input_gain(s);
        d.dv += g.v * u;
        d.dalpha += g.alpha * u;
        d
    }

    /// Coil current for a given flux rate. Independent of the resistance.
    pub fn coil_current(&self, s: &State, alpha_dot: f64) -> f64 {
        (self.total_reluctance(s.z, s.alpha) * s.alpha + self.eddy * alpha_dot) / self.coil_turns
    }

    /// Inverse of [`coil_current`](Self::coil_current): the flux rate that a
    /// prescribed current imposes. Requires `k_ec > 0`.
    pub fn flux_rate_from_current(&self, s: &State, current: f64) -> Result<f64> {
        if self.eddy <= 0.0 {
            return Err(Error::invalid("current drive requires k_ec > 0"));
        }
        Ok((self.coil_turns * current - self.total_reluctance(s.z, s.alpha) * s.alpha) / self.eddy)
    }

    /// Coefficients `(a, b)` of the eddy-free current rate `di/dt = a + b u`.
    pub fn current_rate_coefficients(&self, s: &State) -> (f64, f64) {
        let core = self.reluctance.core(s.alpha);
        let gap = self.reluctance.gap(s.z);
        let phi = core.d1 * s.alpha + core.value + gap.value;
        let n = self.coil_turns;
        let f = self.drift(s);
        let g = self.input_gain(s);
        let a = (gap.d1 * s.v * s.alpha + phi * f.dalpha) / n;
        let b = phi * g.alpha / n;
        (a, b)
    }

    /// Time derivative of the coil current under voltage `u`.
    pub fn current_derivative(&self, s: &State, u: f64, mode: CurrentRate) -> f64 {
        let (a, b) = self.current_rate_coefficients(s);
        let quasi_static = a + b * u;
        match mode {
            CurrentRate::EddyFree => quasi_static,
            CurrentRate::Full { u_dot } => {
                let core = self.reluctance.core(s.alpha);
                let gap = self.reluctance.gap(s.z);
                let phi = core.d1 * s.alpha + core.value + gap.value;
                let den = self.flux_denominator();
                let alpha_dot = self.dynamics(s, u).dalpha;
                let alpha_ddot = -self.resistance * gap.d1 * s.alpha / den * s.v
                    - self.resistance * phi / den * alpha_dot
                    + self.input_gain(s).alpha * u_dot;
                quasi_static + self.eddy * alpha_ddot / self.coil_turns
            }
        }
    }

    /// Flux that balances the spring at rest at position `z`.
    pub fn equilibrium_flux(&self, z: f64) -> Result<f64> {
        let spring = self.spring_stiffness * (self.spring_rest - z);
        let slope = self.reluctance.gap(z).d1;
        if spring < 0.0 || slope <= 0.0 {
            return Err(Error::invalid(format!("no magnetic equilibrium at z = {z:e}")));
        }
        let alpha = (2.0 * spring / slope).sqrt();
        self.check_state(&State::new(z, 0.0, alpha))?;
        Ok(alpha)
    }
}

/// Gap slope of the default reluctance family, in 1/(H m).
///
/// Chosen so that a 25 V step does not move the armature and a 30 V step
/// closes it after roughly 12 ms.
pub const DEFAULT_GAP_SLOPE: f64 = 8.7e10;

/// How [`ActuatorParams::current_derivative`] treats the eddy-current term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CurrentRate {
    /// Drop `k_ec * alpha''` (the form used by the regularization cost).
    EddyFree,
    /// Keep it; needs the voltage slope.
    Full { u_dot: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valve() -> ActuatorParams {
        ActuatorParams::reference_valve()
    }

    #[test]
    fn rest_state_has_no_acceleration() {
        let p = valve();
        let d = p.drift(&State::new(p.spring_rest, 0.0, 0.0));
        assert_eq!(d.dv, 0.0);
    }

    #[test]
    fn zero_flux_does_not_decay() {
        let p = valve();
        for (z, v) in [(4e-4, -0.3), (1.2e-3, 0.1)] {
            assert_eq!(p.drift(&State::new(z, v, 0.0)).dalpha, 0.0);
        }
    }

    #[test]
    fn equilibrium_flux_matches_bisection() {
        let p = valve();
        let z = 1.6e-3;
        let (mut lo, mut hi) = (0.0_f64, 2.0e-5_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p.acceleration(z, 0.0, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let alpha0 = p.equilibrium_flux(z).unwrap();
        assert!((alpha0 - 0.5 * (lo + hi)).abs() < 1e-18);
        assert!(p.acceleration(z, 0.0, alpha0).abs() < 1e-9);
    }

    #[test]
    fn input_gain_values() {
        let p = valve();
        let g = p.input_gain(&State::default());
        let expected = 1.2e3 / (1.2e3 * 1.2e3 + 50.0 * 1.63e3);
        assert!((g.alpha - expected).abs() < 1e-18);
        assert_eq!(g.v, 0.0);

        let mut q = valve();
        q.eddy = 0.0;
        assert!((q.input_gain(&State::default()).alpha - 1.0 / 1.2e3).abs() < 1e-18);
        q.coil_turns *= 2.0;
        assert!((q.input_gain(&State::default()).alpha - 0.5 / 1.2e3).abs() < 1e-18);
    }

    #[test]
    fn current_map_round_trip() {
        let p = valve();
        let s = State::new(9e-4, -0.2, 6e-6);
        assert_eq!(p.coil_current(&State::new(1e-3, 0.0, 0.0), 0.0), 0.0);
        for alpha_dot in [-0.02, 0.0, 0.013] {
            let i = p.coil_current(&s, alpha_dot);
            let back = p.flux_rate_from_current(&s, i).unwrap();
            assert!((back - alpha_dot).abs() <= 1e-12 * alpha_dot.abs().max(1e-3));
        }
        let mut q = valve();
        q.eddy = 0.0;
        let expected = q.total_reluctance(s.z, s.alpha) * s.alpha / q.coil_turns;
        assert_eq!(q.coil_current(&s, 0.7), expected);
        assert!(q.flux_rate_from_current(&s, 0.1).is_err());
    }

    #[test]
    fn current_derivative_special_cases() {
        let p = valve();
        // v = 0 and alpha' = 0 means the flux sits at its voltage equilibrium.
        let s = State::new(1e-3, 0.0, 5e-6);
        let u_eq = -p.drift(&s).dalpha / p.input_gain(&s).alpha;
        assert!(p.current_derivative(&s, u_eq, CurrentRate::EddyFree).abs() < 1e-9);

        let s0 = State::new(1e-3, 0.3, 0.0);
        let u = 20.0;
        let alpha_dot = p.dynamics(&s0, u).dalpha;
        let expected = p.total_reluctance(s0.z, 0.0) * alpha_dot / p.coil_turns;
        let got = p.current_derivative(&s0, u, CurrentRate::EddyFree);
        assert!((got - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn full_current_derivative_matches_time_differencing() {
        let p = valve();
        let s = State::new(1.1e-3, -0.25, 6e-6);
        let (u, u_dot) = (30.0, 2.0e3);
        let h = 1e-9;
        let step = |dt: f64| {
            let d = p.dynamics(&s, u);
            let s1 = State::new(s.z + d.dz * dt, s.v + d.dv * dt, s.alpha + d.dalpha * dt);
            let a1 = p.dynamics(&s1, u + u_dot * dt).dalpha;
            p.coil_current(&s1, a1)
        };
        let fd = (step(h) - step(-h)) / (2.0 * h);
        let exact = p.current_derivative(&s, u, CurrentRate::Full { u_dot });
        assert!((fd - exact).abs() < 1e-4 * exact.abs());
    }

    #[test]
    fn core_reluctance_is_even_and_smooth() {
        let r = valve().reluctance;
        for a in [1e-7, 3e-6, 2e-5] {
            assert_eq!(r.core(a).value, r.core(-a).value);
            let h = a * 1e-6;
            let fd = (r.core(a + h).value - r.core(a - h).value) / (2.0 * h);
            assert!((fd - r.core(a).d1).abs() < 1e-6 * r.core(a).d1.abs());
            let fd2 = (r.core(a + h).d1 - r.core(a - h).d1) / (2.0 * h);
            assert!((fd2 - r.core(a).d2).abs() < 1e-6 * r.core(a).d2.abs());
        }
        assert_eq!(r.core(0.0).d1, 0.0);
    }

    #[test]
    fn tabulated_family_round_trips_through_validation() {
        let z: Vec<f64> = (0..10).map(|k| 3e-4 + k as f64 * 1.5e-4).collect();
        let rg: Vec<f64> = z.iter().map(|z| 8.7e10 * z).collect();
        let a: Vec<f64> = (0..10).map(|k| k as f64 * 2.5e-6).collect();
        let rc: Vec<f64> = a.iter().map(|a| 4.41e6 / (1.0 - (3.8e4 * a).powi(2))).collect();
        let mut p = valve();
        p.reluctance = Reluctance::Tabulated(TabulatedReluctance::new(&z, &rg, &a, &rc).unwrap());
        p.validate().unwrap();
        let g = p.reluctance.gap(1e-3);
        assert!((g.value - 8.7e7).abs() < 1e-3 * 8.7e7);
        assert!(p.reluctance.core(-1e-5).d1 < 0.0);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut p = valve();
        p.mass = 0.0;
        assert!(p.validate().is_err());
        let mut p = valve();
        p.z_min = p.z_max;
        assert!(p.validate().is_err());
        let mut p = valve();
        p.eddy = -1.0;
        assert!(p.validate().is_err());
        let p = valve();
        assert!(p.check_state(&State::new(1e-3, 0.0, 0.96 / 3.8e4)).is_err());
        assert!(p.check_state(&State::new(1e-3, 0.0, 0.5 / 3.8e4)).is_ok());
    }
}
