//! Running costs of the probability-based and energy-optimal problems.

use serde::{Deserialize, Serialize};

use crate::actuator::{ActuatorParams, State};
use crate::contact::{self, BounceConfig, BounceRule, ContactModel};
use crate::error::{Error, Result};
use crate::ocp::{Mode, OcpSpec};
use crate::quadrature;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Contact velocity weight.
    pub w1: f64,
    /// Bounce acceleration weight.
    pub w2: f64,
    /// Current-rate regularization weight.
    pub w3: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { w1: 1e6, w2: 1e3, w3: 1.0 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w1, self.w2, self.w3];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("cost weights must be non-negative and finite"));
        }
        Ok(())
    }

    pub fn scaled(&self, contact: f64) -> Self {
        Self { w1: self.w1 * contact, w2: self.w2 * contact, w3: self.w3 }
    }
}

/// Velocity term `w1 v^2 f(z) / P`.
pub fn v1(s: &State, cm: &ContactModel, w: &CostWeights) -> f64 {
    let f = cm.pdf(s.z);
    if f == 0.0 || s.v == 0.0 {
        return 0.0;
    }
    w.w1 * s.v * s.v * f / cm.probability()
}

/// Derivative of the bounce acceleration with respect to the velocity.
pub(crate) fn bounce_velocity_gain(bc: &BounceConfig, p: &ActuatorParams) -> f64 {
    match bc.rule {
        BounceRule::Restitution(e) => p.friction * e / p.mass,
        _ => 0.0,
    }
}

/// Bounce term `-w2 v a_sat f(z) / P` with the smooth saturation.
pub fn v2(s: &State, cm: &ContactModel, p: &ActuatorParams, bc: &BounceConfig, w: &CostWeights) -> f64 {
    let f = cm.pdf(s.z);
    if f == 0.0 {
        return 0.0;
    }
    let a_b = bc.bounce_acceleration(s, p, cm.sign);
    let (a_sat, _) = contact::smooth_saturation(a_b, cm.sign, bc.kappa);
    -w.w2 * s.v * a_sat * f / cm.probability()
}

/// Regularization `w3 (di/dt)^2`, with the eddy term dropped from the current rate.
pub fn v3(s: &State, u: f64, p: &ActuatorParams, w: &CostWeights) -> Result<f64> {
    let (a, b) = p.current_rate_coefficients(s);
    if b == 0.0 {
        return Err(Error::DegenerateRegularization(b));
    }
    let e = a + b * u;
    Ok(w.w3 * e * e)
}

/// Energy-optimal running cost `u^2`.
pub fn v_eos(u: f64) -> f64 {
    u * u
}

/// Integrated cost terms of a trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    /// `∫ u^2 dt`.
    pub j_eos: f64,
    /// Sum of the terms active in the problem's mode.
    pub total: f64,
}

/// Integrates every cost term along a solved trajectory. The control is
/// recomputed from the interpolated state and costate.
pub fn total_cost(traj: &Trajectory, spec: &OcpSpec) -> Result<CostBreakdown> {
    let cm = &spec.contact;
    let j1 = if spec.weights.w1 == 0.0 {
        0.0
    } else {
        contact::integrate_over_contact(traj, cm, |s| v1(s, cm, &spec.weights))
    };
    let j2 = if spec.weights.w2 == 0.0 {
        0.0
    } else {
        contact::integrate_over_contact(traj, cm, |s| v2(s, cm, &spec.params, &spec.bounce, &spec.weights))
    };
    let u_at = |t: f64| spec.optimal_control(&traj.state_at(t), &traj.costate_at(t));
    let mut j3 = 0.0;
    let mut j_eos = 0.0;
    for k in 0..traj.len() - 1 {
        let (a, b) = (traj.t[k], traj.t[k + 1]);
        if spec.weights.w3 != 0.0 {
            j3 += quadrature::integrate(
                |t| {
                    let u = u_at(t).unwrap_or(f64::NAN);
                    v3(&traj.state_at(t), u, &spec.params, &spec.weights).unwrap_or(f64::NAN)
                },
                a,
                b,
                0.0,
                1e-10,
            )
            .value;
        }
        j_eos += quadrature::integrate(|t| v_eos(u_at(t).unwrap_or(f64::NAN)), a, b, 0.0, 1e-10).value;
    }
    if !(j3.is_finite() && j_eos.is_finite()) {
        return Err(Error::DegenerateRegularization(0.0));
    }
    let total = match spec.mode {
        Mode::Pos => j1 + j2 + j3,
        Mode::Eos => j_eos,
    };
    Ok(CostBreakdown { j1, j2, j3, j_eos, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::MotionSign;

    fn setup() -> (ActuatorParams, ContactModel) {
        let cm = ContactModel::gaussian(3.99e-4, 2e-5, MotionSign::Making, 1.6e-3, 3.99e-4, 3.5e-3).unwrap();
        (ActuatorParams::reference_valve(), cm)
    }

    #[test]
    fn v1_at_the_peak() {
        let (_, cm) = setup();
        let w = CostWeights::default();
        assert_eq!(v1(&State::new(3.99e-4, 0.0, 1e-5), &cm, &w), 0.0);
        let peak = 1.0 / (2e-5 * (2.0 * std::f64::consts::PI).sqrt());
        let got = v1(&State::new(3.99e-4, -0.05, 1e-5), &cm, &w);
        let expected = 1e6 * 0.0025 * peak / 0.5;
        assert!((got - expected).abs() < 1e-9 * expected);
        assert_eq!(v1(&State::new(1.6e-3, -0.05, 1e-5), &cm, &w), 0.0);
    }

    #[test]
    fn v2_vanishes_far_from_contact_and_penalizes_take_off() {
        let (p, cm) = setup();
        let bc = BounceConfig { kappa: 1e3, ..Default::default() };
        let w = CostWeights::default();
        assert_eq!(v2(&State::new(1.6e-3, -0.05, 1e-5), &cm, &p, &bc, &w), 0.0);
        // Weak flux: the spring wins and the armature would take off.
        let s = State::new(4e-4, -0.05, 1e-6);
        assert!(p.acceleration(s.z, 0.0, s.alpha) > 0.0);
        assert!(v2(&s, &cm, &p, &bc, &w) > 0.0);
        // Strong flux holds the armature.
        let s = State::new(4e-4, -0.05, 2e-5);
        assert!(v2(&s, &cm, &p, &bc, &w).abs() < 1e-9);
    }

    #[test]
    fn v3_is_a_convex_quadratic() {
        let (p, _) = setup();
        let w = CostWeights::default();
        let s = State::new(1e-3, -0.1, 1.2e-5);
        let (a, b) = p.current_rate_coefficients(&s);
        assert!(v3(&s, -a / b, &p, &w).unwrap().abs() < 1e-18);
        let c = |u: f64| v3(&s, u, &p, &w).unwrap();
        let c2 = (c(1.0) + c(-1.0) - 2.0 * c(0.0)) / 2.0;
        assert!(c2 > 0.0);
        assert!((c2 - b * b).abs() < 1e-9 * b * b);
        assert_eq!(v3(&s, 3.0, &p, &CostWeights { w3: 0.0, ..w }).unwrap(), 0.0);
    }

    #[test]
    fn eos_rate() {
        assert_eq!(v_eos(0.0), 0.0);
        assert_eq!(v_eos(45.0), 2025.0);
    }
}
