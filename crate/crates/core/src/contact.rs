//! Stochastic contact model: where the armature hits, when, and how hard.
//!
//! The contact position `Z_c` is a random variable with density `f_Zc`. Along a
//! monotone trajectory `z(t)` it induces a contact time with density
//! `f_Tc(t) = |v(t)| f_Zc(z(t))`, and expectations conditioned on contact
//! within the horizon reduce to one-dimensional quadratures over the mesh.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

use crate::actuator::{ActuatorParams, State};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::trajectory::Trajectory;

/// Probability constants below this are treated as "no contact".
pub const MIN_PROBABILITY: f64 = 1e-12;
/// Position reversals shorter than this are ignored (s).
pub const REVERSAL_TIME_TOL: f64 = 1e-6;
/// Position reversals smaller than this are ignored (m).
pub const REVERSAL_DISTANCE_TOL: f64 = 1e-9;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A user-supplied differentiable contact-position density.
pub trait ContactDensity: Send + Sync + fmt::Debug {
    fn pdf(&self, z: f64) -> f64;
    fn dpdf(&self, z: f64) -> f64;
    fn cdf(&self, z: f64) -> f64;
    fn sample(&self, rng: &mut dyn RngCore) -> f64;
    /// Interval outside of which the density is negligible, if known.
    fn support(&self) -> Option<(f64, f64)> {
        None
    }
}

#[derive(Clone, Debug)]
pub enum Density {
    Gaussian { mu: f64, sigma: f64 },
    /// All mass at one position. Only usable for sampling.
    PointMass { at: f64 },
    Custom(Arc<dyn ContactDensity>),
}

impl Density {
    pub fn pdf(&self, z: f64) -> f64 {
        match self {
            Density::Gaussian { mu, sigma } => {
                let x = (z - mu) / sigma;
                INV_SQRT_2PI / sigma * (-0.5 * x * x).exp()
            }
            Density::PointMass { .. } => 0.0,
            Density::Custom(d) => d.pdf(z),
        }
    }

    pub fn dpdf(&self, z: f64) -> f64 {
        match self {
            Density::Gaussian { mu, sigma } => -(z - mu) / (sigma * sigma) * self.pdf(z),
            Density::PointMass { .. } => 0.0,
            Density::Custom(d) => d.dpdf(z),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            Density::Gaussian { mu, sigma } => 0.5 * erfc(-(z - mu) / (sigma * std::f64::consts::SQRT_2)),
            Density::PointMass { at } => {
                if z >= *at {
                    1.0
                } else {
                    0.0
                }
            }
            Density::Custom(d) => d.cdf(z),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match self {
            Density::Gaussian { mu, sigma } => {
                let x: f64 = StandardNormal.sample(rng);
                mu + sigma * x
            }
            Density::PointMass { at } => *at,
            Density::Custom(d) => d.sample(rng),
        }
    }

    fn support(&self) -> Option<(f64, f64)> {
        match self {
            Density::Gaussian { mu, sigma } => Some((mu - 12.0 * sigma, mu + 12.0 * sigma)),
            Density::PointMass { at } => Some((*at, *at)),
            Density::Custom(d) => d.support(),
        }
    }
}

/// Direction of motion at contact: closing the gap (`Making`, `V_c < 0`) or
/// opening it (`Breaking`, `V_c > 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionSign {
    Making,
    Breaking,
}

impl MotionSign {
    pub fn value(self) -> f64 {
        match self {
            MotionSign::Making => -1.0,
            MotionSign::Breaking => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ContactModel {
    pub density: Density,
    pub sign: MotionSign,
    pub z_start: f64,
    pub z_end: f64,
    pub t_f: f64,
}

impl ContactModel {
    pub fn gaussian(mu: f64, sigma: f64, sign: MotionSign, z_start: f64, z_end: f64, t_f: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma_z must be positive, got {sigma}")));
        }
        if !(t_f > 0.0) {
            return Err(Error::invalid("t_f must be positive"));
        }
        Ok(Self { density: Density::Gaussian { mu, sigma }, sign, z_start, z_end, t_f })
    }

    /// Same model with a different Gaussian spread.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let density = match self.density {
            Density::Gaussian { mu, .. } => Density::Gaussian { mu, sigma },
            ref d => d.clone(),
        };
        Self { density, ..self.clone() }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self.density {
            Density::Gaussian { sigma, .. } => Some(sigma),
            _ => None,
        }
    }

    pub fn pdf(&self, z: f64) -> f64 {
        self.density.pdf(z)
    }

    pub fn dpdf(&self, z: f64) -> f64 {
        self.density.dpdf(z)
    }

    /// `P(0 <= T_c <= t_f)` from the CDF at the two end positions.
    pub fn probability(&self) -> f64 {
        (self.density.cdf(self.z_end) - self.density.cdf(self.z_start)).abs()
    }

    pub fn checked_probability(&self) -> Result<f64> {
        let p = self.probability();
        if !(p >= MIN_PROBABILITY) {
            return Err(Error::ZeroContactProbability(p));
        }
        Ok(p)
    }
}

/// How the post-impact velocity `v_b` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BounceRule {
    /// `v_b = 0`.
    WorstCaseZero,
    /// Grid search for the admissible `v_b` that maximizes the take-off
    /// acceleration.
    ArgmaxSearch,
    /// `v_b = -e v`.
    Restitution(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BounceConfig {
    pub rule: BounceRule,
    /// Steepness of the smooth saturation (s^2/m).
    pub kappa: f64,
}

impl Default for BounceConfig {
    fn default() -> Self {
        Self { rule: BounceRule::WorstCaseZero, kappa: 1.0 }
    }
}

impl BounceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        if let BounceRule::Restitution(e) = self.rule {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::invalid(format!("restitution must lie in [0, 1], got {e}")));
            }
        }
        Ok(())
    }

    /// Post-impact velocity; always satisfies `v_b v <= 0` and `|v_b| <= |v|`.
    pub fn bounced_velocity(&self, s: &State, p: &ActuatorParams, sign: MotionSign) -> f64 {
        match self.rule {
            BounceRule::WorstCaseZero => 0.0,
            BounceRule::Restitution(e) => -e * s.v,
            BounceRule::ArgmaxSearch => {
                let n = 200;
                let mut best = (f64::NEG_INFINITY, 0.0);
                for k in 0..=n {
                    let vb = -s.v * k as f64 / n as f64;
                    let score = -sign.value() * p.acceleration(s.z, vb, s.alpha);
                    if score > best.0 {
                        best = (score, vb);
                    }
                }
                best.1
            }
        }
    }

    /// Acceleration right after the impact.
    pub fn bounce_acceleration(&self, s: &State, p: &ActuatorParams, sign: MotionSign) -> f64 {
        p.acceleration(s.z, self.bounced_velocity(s, p, sign), s.alpha)
    }
}

/// `ln(1 + exp(kappa x)) / kappa` without overflow.
pub fn softplus(x: f64, kappa: f64) -> f64 {
    let y = kappa * x;
    (y.max(0.0) + (-y.abs()).exp().ln_1p()) / kappa
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smoothly saturated bounce acceleration and its derivative with respect to `a_b`.
///
/// Only accelerations pointing away from the contact (take-off) survive.
pub fn smooth_saturation(a_b: f64, sign: MotionSign, kappa: f64) -> (f64, f64) {
    let s = sign.value();
    (-s * softplus(-s * a_b, kappa), logistic(-kappa * s * a_b))
}

/// Hard version of [`smooth_saturation`].
pub fn hard_saturation(a_b: f64, sign: MotionSign) -> f64 {
    if a_b * sign.value() <= 0.0 {
        a_b
    } else {
        0.0
    }
}

/// Which saturation to use when evaluating contact acceleration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Saturation {
    Smooth,
    Hard,
}

/// Saturated bounce acceleration at a state.
pub fn saturated_bounce_acceleration(
    s: &State,
    p: &ActuatorParams,
    cm: &ContactModel,
    bc: &BounceConfig,
    mode: Saturation,
) -> f64 {
    let a_b = bc.bounce_acceleration(s, p, cm.sign);
    match mode {
        Saturation::Smooth => smooth_saturation(a_b, cm.sign, bc.kappa).0,
        Saturation::Hard => hard_saturation(a_b, cm.sign),
    }
}

/// `f_Tc = |v| f_Zc(z)`.
pub fn contact_time_pdf(s: &State, cm: &ContactModel) -> f64 {
    if s.v == 0.0 {
        return 0.0;
    }
    s.v.abs() * cm.pdf(s.z)
}

/// Fails if the position reverses direction by more than the tolerances.
pub fn check_monotone(traj: &Trajectory) -> Result<()> {
    let z0 = traj.states[0].z;
    let d = (traj.final_state().z - z0).signum();
    if d == 0.0 {
        return Ok(());
    }
    let mut best = d * z0;
    let mut t_best = traj.t[0];
    for (t, s) in traj.t.iter().zip(&traj.states) {
        let q = d * s.z;
        if q >= best {
            best = q;
            t_best = *t;
            continue;
        }
        let amount = best - q;
        let duration = t - t_best;
        if amount > REVERSAL_DISTANCE_TOL && duration > REVERSAL_TIME_TOL {
            return Err(Error::MonotonicityViolation { t: *t, amount, duration });
        }
    }
    Ok(())
}

/// Probability of contact before time `t`.
pub fn contact_probability_by(traj: &Trajectory, t: f64, cm: &ContactModel) -> Result<f64> {
    check_monotone(traj)?;
    let z0 = traj.states[0].z;
    let zt = traj.state_at(t.clamp(traj.t[0], traj.span().1)).z;
    Ok((cm.density.cdf(zt) - cm.density.cdf(z0)).abs().min(1.0))
}

/// Integrates `g(state)` over the trajectory, skipping mesh intervals that lie
/// entirely outside the support of the density.
pub(crate) fn integrate_over_contact<F: FnMut(&State) -> f64>(traj: &Trajectory, cm: &ContactModel, mut g: F) -> f64 {
    let support = cm.density.support();
    let mut total = 0.0;
    let mut comp = 0.0;
    for k in 0..traj.len() - 1 {
        let (za, zb) = (traj.states[k].z, traj.states[k + 1].z);
        if let Some((lo, hi)) = support {
            let pad = 0.1 * (zb - za).abs();
            if za.max(zb) + pad < lo || za.min(zb) - pad > hi {
                continue;
            }
        }
        let mut breaks = vec![traj.t[k]];
        // Split where the path crosses whole multiples of sigma so a narrow
        // peak can't hide between quadrature nodes.
        if let Density::Gaussian { mu, sigma } = cm.density {
            let (lo, hi) = (za.min(zb), za.max(zb));
            let first = ((lo - mu) / sigma).ceil().max(-12.0);
            let last = ((hi - mu) / sigma).floor().min(12.0);
            let mut j = first;
            while j <= last {
                let level = mu + j * sigma;
                if level > lo && level < hi {
                    breaks.push(crate::ode::find_root(
                        |t| traj.state_at(t).z - level,
                        traj.t[k],
                        traj.t[k + 1],
                        1e-15,
                    ));
                }
                j += 1.0;
            }
            breaks[1..].sort_by(f64::total_cmp);
        }
        breaks.push(traj.t[k + 1]);
        let q = quadrature::integrate_pieces(|t| g(&traj.state_at(t)), &breaks, 1e-14, 1e-10);
        // Kahan summation; the mesh can have 10^5 intervals.
        let y = q.value - comp;
        let s = total + y;
        comp = (s - total) - y;
        total = s;
    }
    total
}

/// `∫ f_Tc dt` over the trajectory; equals the contact probability on monotone paths.
pub fn contact_time_integral(traj: &Trajectory, cm: &ContactModel) -> f64 {
    integrate_over_contact(traj, cm, |s| contact_time_pdf(s, cm))
}

/// `E[V_c | 0 <= T_c <= t_f]`.
pub fn expected_contact_velocity(traj: &Trajectory, cm: &ContactModel) -> Result<f64> {
    check_monotone(traj)?;
    let p = cm.checked_probability()?;
    Ok(integrate_over_contact(traj, cm, |s| s.v * s.v.abs() * cm.pdf(s.z)) / p)
}

/// `E[A_c | 0 <= T_c <= t_f]` with the chosen saturation.
pub fn expected_contact_acceleration(
    traj: &Trajectory,
    cm: &ContactModel,
    p: &ActuatorParams,
    bc: &BounceConfig,
    mode: Saturation,
) -> Result<f64> {
    check_monotone(traj)?;
    let prob = cm.checked_probability()?;
    let total = integrate_over_contact(traj, cm, |s| {
        s.v.abs() * saturated_bounce_acceleration(s, p, cm, bc, mode) * cm.pdf(s.z)
    });
    Ok(total / prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ContactModel {
        ContactModel::gaussian(3.99e-4, 2e-5, MotionSign::Making, 1.6e-3, 3.99e-4, 3.5e-3).unwrap()
    }

    fn ramp(v: f64, z0: f64, z1: f64, nodes: usize) -> Trajectory {
        let tf = (z1 - z0) / v;
        Trajectory::sample(0.0, tf, nodes, |t| (State::new(z0 + v * t, v, 0.0), [v, 0.0, 0.0])).unwrap()
    }

    #[test]
    fn contact_time_pdf_at_the_peak() {
        let cm = model();
        assert_eq!(contact_time_pdf(&State::new(3.99e-4, 0.0, 0.0), &cm), 0.0);
        let got = contact_time_pdf(&State::new(3.99e-4, -0.1, 0.0), &cm);
        let expected = 0.1 / (2e-5 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn probability_anchors() {
        let cm = model();
        assert!((cm.probability() - 0.5).abs() < 1e-12);
        let mut cm3 = cm.clone();
        cm3.z_end = 3.99e-4 - 3.0 * 2e-5;
        assert!((cm3.probability() - 0.998_650_1).abs() < 1e-6);
    }

    #[test]
    fn full_sweep_integrates_to_one() {
        let mut cm = model();
        cm.z_end = 2e-4;
        let tr = ramp(-0.1, 1.6e-3, 2e-4, 4001);
        assert!((contact_time_integral(&tr, &cm) - 1.0).abs() < 1e-9);
        let ev = expected_contact_velocity(&tr, &cm).unwrap();
        assert!((ev + 0.1).abs() < 1e-9);
    }

    #[test]
    fn probability_by_time() {
        let cm = model();
        let tr = ramp(-0.1, 1.6e-3, 3.99e-4, 2001);
        assert_eq!(contact_probability_by(&tr, 0.0, &cm).unwrap(), 0.0);
        let end = contact_probability_by(&tr, tr.span().1, &cm).unwrap();
        assert!((end - 0.5).abs() < 1e-9);
    }

    #[test]
    fn reversal_is_rejected() {
        let tr = Trajectory::sample(0.0, 1e-3, 101, |t| {
            let z = 1e-3 - 0.5 * t + 2e3 * t * t;
            (State::new(z, -0.5 + 4e3 * t, 0.0), [-0.5 + 4e3 * t, 4e3, 0.0])
        })
        .unwrap();
        assert!(matches!(check_monotone(&tr), Err(Error::MonotonicityViolation { .. })));
    }

    #[test]
    fn tiny_wiggles_are_ignored() {
        let tr = Trajectory::sample(0.0, 1e-3, 1001, |t| {
            let z = 1e-3 - 0.5 * t + 1e-10 * (t * 1e5).sin();
            (State::new(z, -0.5, 0.0), [-0.5, 0.0, 0.0])
        })
        .unwrap();
        check_monotone(&tr).unwrap();
    }

    #[test]
    fn zero_probability_is_an_error() {
        let mut cm = model();
        cm.z_start = 1e-3;
        cm.z_end = 9e-4;
        let tr = ramp(-0.1, 1e-3, 9e-4, 11);
        assert!(matches!(expected_contact_velocity(&tr, &cm), Err(Error::ZeroContactProbability(_))));
    }

    #[test]
    fn bounce_rules() {
        let p = ActuatorParams::reference_valve();
        let s = State::new(4e-4, -0.2, 1e-5);
        let rule = |r| BounceConfig { rule: r, kappa: 1.0 };
        assert_eq!(rule(BounceRule::WorstCaseZero).bounced_velocity(&s, &p, MotionSign::Making), 0.0);
        assert_eq!(rule(BounceRule::Restitution(1.0)).bounced_velocity(&s, &p, MotionSign::Making), 0.2);
        assert_eq!(rule(BounceRule::ArgmaxSearch).bounced_velocity(&s, &p, MotionSign::Making), 0.0);
    }

    #[test]
    fn saturation_corner_and_bound() {
        let kappa = 50.0;
        let (v, _) = smooth_saturation(0.0, MotionSign::Making, kappa);
        assert!((v - 2f64.ln() / kappa).abs() < 1e-15);
        let mut worst: f64 = 0.0;
        for k in -400..=400 {
            let a = k as f64 * 0.05;
            let gap = (smooth_saturation(a, MotionSign::Making, kappa).0 - hard_saturation(a, MotionSign::Making)).abs();
            worst = worst.max(gap);
        }
        assert!(worst <= 2f64.ln() / kappa + 1e-15);
        assert!(smooth_saturation(-50.0, MotionSign::Making, 1e3).0.abs() < 1e-12);
    }
}
