//! Indirect optimal control: Hamiltonian, control law, costates, and the
//! state/costate boundary value problem.
//!
//! Two problems share the machinery. [`Mode::Pos`] minimizes the expected
//! contact velocity and bounce acceleration plus a current-rate
//! regularization; [`Mode::Eos`] minimizes `∫ u^2 dt` and forces the armature
//! to rest at the final position.
//!
//! The BVP is solved in scaled variables: time runs over `[0, 1]`, states are
//! divided by power-of-ten reference values and costates are multiplied by
//! them and divided by a cost scale.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::actuator::{ActuatorParams, State};
use crate::bvp::{self, BvpFailure, BvpOptions, BvpSolution, BvpSystem};
use crate::contact::{self, BounceConfig, ContactModel, MotionSign};
use crate::cost::{self, CostWeights};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::trajectory::{Diagnostics, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Probability-based soft landing.
    Pos,
    /// Energy optimal with rest at the final position.
    Eos,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pos" => Ok(Mode::Pos),
            "eos" => Ok(Mode::Eos),
            other => Err(Error::invalid(format!("unknown mode '{other}' (expected pos or eos)"))),
        }
    }
}

/// Costate vector conjugate to `(z, v, alpha)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Costate {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl Costate {
    pub fn new(l1: f64, l2: f64, l3: f64) -> Self {
        Self { l1, l2, l3 }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { l1: a[0], l2: a[1], l3: a[2] }
    }
}

/// First intermediate weight factor when bisecting away from zero weight.
const ZERO_WEIGHT_STEP: f64 = 1e-3;

/// Multipliers applied to the target problem in one continuation stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStage {
    /// Factor on `w1` and `w2`.
    pub weight: f64,
    /// Factor on `sigma_z`.
    pub sigma: f64,
    /// Factor on the bounce saturation steepness.
    pub kappa: f64,
    /// Factor on the control clamp sharpness.
    pub beta: f64,
}

impl ContinuationStage {
    pub const TARGET: ContinuationStage = ContinuationStage { weight: 1.0, sigma: 1.0, kappa: 1.0, beta: 1.0 };

    pub fn new(weight: f64, sigma: f64, kappa: f64, beta: f64) -> Self {
        Self { weight, sigma, kappa, beta }
    }

    /// Halfway stage, geometric in every factor. A zero weight steps to a
    /// thousandth of the other one first, since the contact terms act on a log scale.
    pub fn midpoint(&self, other: &ContinuationStage) -> ContinuationStage {
        let geo = |a: f64, b: f64| (a * b).sqrt();
        let weight = match (self.weight == 0.0, other.weight == 0.0) {
            (true, true) => 0.0,
            (true, false) => other.weight * ZERO_WEIGHT_STEP,
            (false, true) => self.weight * ZERO_WEIGHT_STEP,
            (false, false) => geo(self.weight, other.weight),
        };
        Self::new(weight, geo(self.sigma, other.sigma), geo(self.kappa, other.kappa), geo(self.beta, other.beta))
    }
}

/// The default homotopy: switch the contact terms on with an inflated
/// spread, shrink the spread, then sharpen the bounce saturation and the
/// control clamp.
pub fn default_schedule() -> Vec<ContinuationStage> {
    let s = ContinuationStage::new;
    vec![
        s(0.0, 1.0, 0.01, 1.0),
        s(1e-3, 10.0, 0.01, 0.25),
        s(1e-2, 10.0, 0.01, 0.25),
        s(1e-1, 10.0, 0.01, 0.25),
        s(1.0, 10.0, 0.01, 0.25),
        s(1.0, 5.0, 0.01, 0.25),
        s(1.0, 3.0, 0.01, 0.25),
        s(1.0, 2.0, 0.01, 0.25),
        s(1.0, 1.4, 0.01, 0.25),
        s(1.0, 1.0, 0.01, 0.25),
        s(1.0, 1.0, 0.1, 0.25),
        s(1.0, 1.0, 0.2, 0.25),
        s(1.0, 1.0, 0.4, 0.25),
        s(1.0, 1.0, 1.0, 0.25),
        ContinuationStage::TARGET,
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Scaled RMS collocation residual bound.
    pub rel_tol: f64,
    /// Scaled boundary-condition residual bound.
    pub abs_tol: f64,
    pub max_mesh: usize,
    /// Smallest Newton step fraction.
    pub newton_damping: f64,
    pub initial_nodes: usize,
    /// Control clamp sharpness (1/V).
    pub clamp_sharpness_beta: f64,
    pub continuation: Vec<ContinuationStage>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            max_mesh: 100_000,
            newton_damping: 1.0 / 64.0,
            initial_nodes: 101,
            clamp_sharpness_beta: 2.0,
            continuation: default_schedule(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if !(self.newton_damping > 0.0 && self.newton_damping <= 1.0) {
            return Err(Error::invalid("newton_damping must lie in (0, 1]"));
        }
        if !(self.clamp_sharpness_beta > 0.0) {
            return Err(Error::invalid("clamp_sharpness_beta must be positive"));
        }
        if self.max_mesh < 3 || self.initial_nodes < 3 {
            return Err(Error::invalid("max_mesh and initial_nodes must be at least 3"));
        }
        match self.continuation.last() {
            None => return Err(Error::invalid("continuation schedule is empty")),
            Some(last) if *last != ContinuationStage::TARGET => {
                return Err(Error::invalid("the last continuation stage must have all factors equal to 1"))
            }
            _ => {}
        }
        if self.continuation.iter().any(|s| !(s.weight >= 0.0 && s.sigma > 0.0 && s.kappa > 0.0 && s.beta > 0.0)) {
            return Err(Error::invalid("continuation factors must be positive (weight may be zero)"));
        }
        Ok(())
    }

    fn bvp_options(&self) -> BvpOptions {
        BvpOptions {
            tol: self.rel_tol,
            bc_tol: self.abs_tol,
            max_nodes: self.max_mesh,
            min_damping: self.newton_damping,
            ..BvpOptions::default()
        }
    }
}

/// A complete optimal control problem.
#[derive(Clone, Debug)]
pub struct OcpSpec {
    pub mode: Mode,
    pub params: ActuatorParams,
    pub contact: ContactModel,
    pub weights: CostWeights,
    pub u_minus: f64,
    pub u_plus: f64,
    pub z_0: f64,
    pub z_f: f64,
    pub t_f: f64,
    pub bounce: BounceConfig,
    pub solver: SolverOptions,
}

/// Saturation bounds `(u_-, u_+)` that stay feasible for any coil resistance
/// in `[r_min, r_max]` given the supply range `[u_min, u_max]`.
pub fn control_bounds(u_min: f64, u_max: f64, r: f64, r_min: f64, r_max: f64) -> Result<(f64, f64)> {
    if !(0.0 < r_min && r_min <= r && r <= r_max) {
        return Err(Error::invalid(format!("need 0 < R_min <= R <= R_max, got {r_min}, {r}, {r_max}")));
    }
    if !(u_min < 0.0 && 0.0 < u_max) {
        return Err(Error::invalid(format!("need u_min < 0 < u_max, got {u_min}, {u_max}")));
    }
    let upper = u_max * r / r_max;
    let lower = u_min + upper * (r - r_min) / r;
    if lower >= upper {
        return Err(Error::InfeasibleBounds { lower, upper });
    }
    Ok((lower, upper))
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `x Φ(βx) + φ(βx)/β`: a ramp convolved with a Gaussian of width `1/β`.
fn smooth_ramp(x: f64, beta: f64) -> f64 {
    let y = beta * x;
    x * normal_cdf(y) + (-0.5 * y * y).exp() * 0.398_942_280_401_432_7 / beta
}

/// Differentiable clamp of `q` into `[lo, hi]`.
pub fn smooth_clamp(q: f64, lo: f64, hi: f64, beta: f64) -> f64 {
    lo + smooth_ramp(q - lo, beta) - smooth_ramp(q - hi, beta)
}

pub fn hard_clamp(q: f64, lo: f64, hi: f64) -> f64 {
    q.clamp(lo, hi)
}

/// Model quantities shared by the control law and the costate equations.
struct Terms {
    f2: f64,
    f3: f64,
    g3: f64,
    /// `∂f2/∂z`, `∂f2/∂alpha`.
    df2: (f64, f64),
    /// `∂f3/∂z`, `∂f3/∂alpha`.
    df3: (f64, f64),
    a: f64,
    b: f64,
    /// `∂A/∂z`, `∂A/∂v`, `∂A/∂alpha`.
    da: (f64, f64, f64),
    /// `∂B/∂z`, `∂B/∂alpha`.
    db: (f64, f64),
}

impl OcpSpec {
    /// The reference soft-landing problem for the bundled valve.
    pub fn reference(mode: Mode) -> Self {
        let (z_0, z_f, t_f) = (1.6e-3, 3.99e-4, 3.5e-3);
        let contact = ContactModel::gaussian(3.99e-4, 4e-10f64.sqrt(), MotionSign::Making, z_0, z_f, t_f)
            .expect("reference contact model is valid");
        Self {
            mode,
            params: ActuatorParams::reference_valve(),
            contact,
            weights: CostWeights::default(),
            u_minus: -45.0,
            u_plus: 45.0,
            z_0,
            z_f,
            t_f,
            bounce: BounceConfig::default(),
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.weights.validate()?;
        self.bounce.validate()?;
        self.solver.validate()?;
        if !(self.u_minus < self.u_plus) {
            return Err(Error::InfeasibleBounds { lower: self.u_minus, upper: self.u_plus });
        }
        if !(self.t_f > 0.0 && self.t_f.is_finite()) {
            return Err(Error::invalid(format!("t_f must be positive, got {}", self.t_f)));
        }
        if self.z_0 == self.z_f || !self.z_0.is_finite() || !self.z_f.is_finite() {
            return Err(Error::invalid("z_0 and z_f must be finite and distinct"));
        }
        if self.mode == Mode::Pos {
            if !(self.weights.w3 > 0.0) {
                return Err(Error::DegenerateRegularization(self.weights.w3));
            }
            self.contact.checked_probability()?;
        }
        Ok(())
    }

    /// The problem solved in continuation stage `stage`.
    pub fn staged(&self, stage: &ContinuationStage) -> OcpSpec {
        let mut s = self.clone();
        s.weights = self.weights.scaled(stage.weight);
        if let Some(sigma) = self.contact.sigma() {
            s.contact = self.contact.with_sigma(sigma * stage.sigma);
        }
        s.bounce.kappa *= stage.kappa;
        s.solver.clamp_sharpness_beta *= stage.beta;
        s
    }

    fn terms(&self, s: &State) -> Terms {
        let p = &self.params;
        let core = p.reluctance.core(s.alpha);
        let gap = p.reluctance.gap(s.z);
        let n = p.coil_turns;
        let den = n * n + p.resistance * p.eddy;
        let g3 = n / den;
        let phi = core.d1 * s.alpha + core.value + gap.value;
        let dphi_da = core.d2 * s.alpha + 2.0 * core.d1;
        let f2 = p.acceleration(s.z, s.v, s.alpha);
        let f3 = -p.resistance * (core.value + gap.value) * s.alpha / den;
        let df2 = ((-p.spring_stiffness - 0.5 * gap.d2 * s.alpha * s.alpha) / p.mass, -gap.d1 * s.alpha / p.mass);
        let df3 = (-p.resistance * gap.d1 * s.alpha / den, -p.resistance * phi / den);
        let a = (gap.d1 * s.v * s.alpha + phi * f3) / n;
        let b = phi * g3 / n;
        let da = (
            (gap.d2 * s.v * s.alpha + gap.d1 * f3 + phi * df3.0) / n,
            gap.d1 * s.alpha / n,
            (gap.d1 * s.v + dphi_da * f3 + phi * df3.1) / n,
        );
        let db = (gap.d1 * g3 / n, dphi_da * g3 / n);
        Terms { f2, f3, g3, df2, df3, a, b, da, db }
    }

    /// Running cost at `(s, u)`.
    pub fn running_cost(&self, s: &State, u: f64) -> f64 {
        match self.mode {
            Mode::Eos => cost::v_eos(u),
            Mode::Pos => {
                let t = self.terms(s);
                let e = t.a + t.b * u;
                cost::v1(s, &self.contact, &self.weights)
                    + cost::v2(s, &self.contact, &self.params, &self.bounce, &self.weights)
                    + self.weights.w3 * e * e
            }
        }
    }

    /// `H = V + λ·(f + G u)`.
    pub fn hamiltonian(&self, s: &State, lam: &Costate, u: f64) -> f64 {
        let t = self.terms(s);
        self.running_cost(s, u) + lam.l1 * s.v + lam.l2 * t.f2 + lam.l3 * (t.f3 + t.g3 * u)
    }

    /// Coefficients `(c2, c1)` of `∂H/∂u = 2 c2 u + c1`.
    pub fn control_coefficients(&self, s: &State, lam: &Costate) -> (f64, f64) {
        let t = self.terms(s);
        match self.mode {
            Mode::Eos => (1.0, lam.l3 * t.g3),
            Mode::Pos => {
                let w3 = self.weights.w3;
                (w3 * t.b * t.b, 2.0 * w3 * t.a * t.b + lam.l3 * t.g3)
            }
        }
    }

    /// Unconstrained minimizer `q*` of the Hamiltonian.
    pub fn stationary_control(&self, s: &State, lam: &Costate) -> Result<f64> {
        let (c2, c1) = self.control_coefficients(s, lam);
        if !(c2 > 0.0) {
            return Err(Error::DegenerateRegularization(c2));
        }
        Ok(-c1 / (2.0 * c2))
    }

    /// Smoothly clamped optimal control used inside the BVP.
    pub fn optimal_control(&self, s: &State, lam: &Costate) -> Result<f64> {
        let q = self.stationary_control(s, lam)?;
        Ok(smooth_clamp(q, self.u_minus, self.u_plus, self.solver.clamp_sharpness_beta))
    }

    /// Exactly clamped optimal control.
    pub fn optimal_control_hard(&self, s: &State, lam: &Costate) -> Result<f64> {
        Ok(hard_clamp(self.stationary_control(s, lam)?, self.u_minus, self.u_plus))
    }

    /// `∂H/∂x` at a fixed control.
    pub fn hamiltonian_gradient(&self, s: &State, lam: &Costate, u: f64) -> [f64; 3] {
        let p = &self.params;
        let t = self.terms(s);
        let mut hz = lam.l2 * t.df2.0 + lam.l3 * t.df3.0;
        let mut hv = lam.l1 - lam.l2 * p.friction / p.mass;
        let mut ha = lam.l2 * t.df2.1 + lam.l3 * t.df3.1;
        if self.mode == Mode::Pos {
            let w = &self.weights;
            let cm = &self.contact;
            let f = cm.pdf(s.z);
            let fp = cm.dpdf(s.z);
            if f != 0.0 || fp != 0.0 {
                let prob = cm.probability();
                let a_b = self.bounce.bounce_acceleration(s, p, cm.sign);
                let (a_sat, a_sat_d) = contact::smooth_saturation(a_b, cm.sign, self.bounce.kappa);
                let dab_dz = t.df2.0;
                let dab_dv = cost::bounce_velocity_gain(&self.bounce, p);
                let dab_da = t.df2.1;
                hz += w.w1 * s.v * s.v * fp / prob - w.w2 * s.v / prob * (a_sat_d * dab_dz * f + a_sat * fp);
                hv += 2.0 * w.w1 * s.v * f / prob - w.w2 / prob * (a_sat * f + s.v * a_sat_d * dab_dv * f);
                ha += -w.w2 * s.v * f / prob * a_sat_d * dab_da;
            }
            let e = t.a + t.b * u;
            hz += 2.0 * w.w3 * e * (t.da.0 + t.db.0 * u);
            hv += 2.0 * w.w3 * e * t.da.1;
            ha += 2.0 * w.w3 * e * (t.da.2 + t.db.1 * u);
        }
        [hz, hv, ha]
    }

    /// `λ' = -∂H/∂x` with the control held at its optimal value.
    pub fn costate_rhs(&self, s: &State, lam: &Costate) -> Result<Costate> {
        let u = self.optimal_control(s, lam)?;
        let g = self.hamiltonian_gradient(s, lam, u);
        Ok(Costate::new(-g[0], -g[1], -g[2]))
    }

    /// The six boundary conditions; all vanish at a solution.
    pub fn boundary_residuals(&self, x0: &State, xf: &State, lam_f: &Costate) -> [f64; 6] {
        let p = &self.params;
        let head = [x0.z - self.z_0, x0.v, p.acceleration(x0.z, x0.v, x0.alpha), xf.z - self.z_f];
        match self.mode {
            Mode::Pos => [head[0], head[1], head[2], head[3], lam_f.l2, lam_f.l3],
            Mode::Eos => [head[0], head[1], head[2], head[3], xf.v, p.acceleration(xf.z, xf.v, xf.alpha)],
        }
    }

    /// Straight-line position, constant velocity, quasi-static flux, zero costates.
    pub fn initial_guess(&self) -> Trajectory {
        let p = &self.params;
        let v = (self.z_f - self.z_0) / self.t_f;
        let nodes = self.solver.initial_nodes;
        let mut tr = Trajectory::sample(0.0, self.t_f, nodes, |t| {
            let z = self.z_0 + v * t;
            let force = p.spring_stiffness * (p.spring_rest - z) - p.friction * v;
            let alpha = (2.0 * force.max(0.0) / p.reluctance.gap(z).d1).sqrt();
            (State::new(z, v, alpha), [v, 0.0, 0.0])
        })
        .expect("uniform mesh is valid");
        for k in 0..tr.len() {
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(tr.len() - 1));
            tr.state_rates[k][2] = (tr.states[hi].alpha - tr.states[lo].alpha) / (tr.t[hi] - tr.t[lo]);
        }
        tr
    }
}

/// Reference magnitudes of the scaled BVP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaling {
    pub state: [f64; 3],
    pub cost: f64,
    pub time: f64,
}

fn pow10(e: f64) -> f64 {
    let k = e as i32;
    if k >= 0 {
        10f64.powi(k)
    } else {
        1.0 / 10f64.powi(-k)
    }
}

fn pow10_round(x: f64) -> f64 {
    pow10(x.abs().log10().round())
}

fn pow10_floor(x: f64) -> f64 {
    pow10(x.abs().log10().floor())
}

impl Scaling {
    pub fn for_spec(spec: &OcpSpec) -> Self {
        let dz = (spec.z_0 - spec.z_f).abs();
        let sv = pow10_round(dz / spec.t_f);
        let state = [pow10_round(dz), sv, pow10_round(spec.params.reluctance.flux_limit())];
        let cost = match spec.mode {
            Mode::Pos if spec.weights.w1 > 0.0 => pow10_floor(spec.weights.w1 * sv * sv * spec.t_f),
            _ => pow10_floor(spec.u_minus.abs().max(spec.u_plus.abs()).powi(2) * spec.t_f),
        };
        Self { state, cost, time: spec.t_f }
    }

    fn to_scaled(&self, s: &State, l: &Costate, out: &mut [f64]) {
        let x = s.to_array();
        let l = l.to_array();
        for i in 0..3 {
            out[i] = x[i] / self.state[i];
            out[3 + i] = l[i] * self.state[i] / self.cost;
        }
    }

    fn from_scaled(&self, y: &[f64]) -> (State, Costate) {
        let s = State::new(y[0] * self.state[0], y[1] * self.state[1], y[2] * self.state[2]);
        let l = Costate::new(y[3] * self.cost / self.state[0], y[4] * self.cost / self.state[1], y[5] * self.cost / self.state[2]);
        (s, l)
    }

    fn acceleration(&self) -> f64 {
        self.state[1] / self.time
    }
}

struct ScaledProblem<'a> {
    spec: &'a OcpSpec,
    scale: Scaling,
}

impl BvpSystem for ScaledProblem<'_> {
    fn dim(&self) -> usize {
        6
    }

    fn left_count(&self) -> usize {
        3
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let (s, l) = self.scale.from_scaled(y);
        let (u, dl) = match self.spec.optimal_control(&s, &l) {
            Ok(u) => {
                let g = self.spec.hamiltonian_gradient(&s, &l, u);
                (u, [-g[0], -g[1], -g[2]])
            }
            Err(_) => (f64::NAN, [f64::NAN; 3]),
        };
        let dx = self.spec.params.dynamics(&s, u).to_array();
        let (tf, c) = (self.scale.time, self.scale.cost);
        for i in 0..3 {
            let si = self.scale.state[i];
            dy[i] = tf * dx[i] / si;
            dy[3 + i] = tf * dl[i] * si / c;
        }
    }

    fn bc_left(&self, ya: &[f64], r: &mut [f64]) {
        let (s, _) = self.scale.from_scaled(ya);
        let p = &self.spec.params;
        r[0] = (s.z - self.spec.z_0) / self.scale.state[0];
        r[1] = s.v / self.scale.state[1];
        r[2] = p.acceleration(s.z, s.v, s.alpha) / self.scale.acceleration();
    }

    fn bc_right(&self, yb: &[f64], r: &mut [f64]) {
        let (s, _) = self.scale.from_scaled(yb);
        let p = &self.spec.params;
        r[0] = (s.z - self.spec.z_f) / self.scale.state[0];
        match self.spec.mode {
            Mode::Pos => {
                r[1] = yb[4];
                r[2] = yb[5];
            }
            Mode::Eos => {
                r[1] = s.v / self.scale.state[1];
                r[2] = p.acceleration(s.z, s.v, s.alpha) / self.scale.acceleration();
            }
        }
    }
}

fn trajectory_from_solution(spec: &OcpSpec, scale: &Scaling, sol: &BvpSolution) -> Trajectory {
    let m = sol.nodes();
    let mut tr = Trajectory {
        t: Vec::with_capacity(m),
        states: Vec::with_capacity(m),
        state_rates: Vec::with_capacity(m),
        costates: Vec::with_capacity(m),
        costate_rates: Vec::with_capacity(m),
        control: Vec::with_capacity(m),
        current: Vec::with_capacity(m),
        diagnostics: Diagnostics {
            max_residual: sol.max_residual(),
            bc_residual: sol.bc_residual,
            newton_iterations: sol.newton_iterations,
            mesh_history: sol.mesh_history.clone(),
            stages: 1,
        },
    };
    for j in 0..m {
        let y = sol.node(j);
        let f = &sol.f[j * 6..(j + 1) * 6];
        let (s, l) = scale.from_scaled(y);
        let mut dx = [0.0; 3];
        let mut dl = [0.0; 3];
        for i in 0..3 {
            dx[i] = f[i] * scale.state[i] / scale.time;
            dl[i] = f[3 + i] * scale.cost / (scale.state[i] * scale.time);
        }
        let u = spec.optimal_control(&s, &l).unwrap_or(f64::NAN);
        tr.t.push(sol.x[j] * scale.time);
        tr.states.push(s);
        tr.state_rates.push(dx);
        tr.costates.push(l);
        tr.costate_rates.push(dl);
        tr.control.push(u);
        tr.current.push(spec.params.coil_current(&s, dx[2]));
    }
    tr
}

/// Drops warm-start nodes the previous solution does not need.
fn thin_guess(guess: &Trajectory, scale: &Scaling, x: Vec<f64>, y: Vec<f64>, tol: f64) -> (Vec<f64>, Vec<f64>) {
    let mut f = vec![0.0; y.len()];
    for k in 0..x.len() {
        for i in 0..3 {
            let si = scale.state[i];
            f[6 * k + i] = guess.state_rates[k][i] * scale.time / si;
            f[6 * k + 3 + i] = guess.costate_rates[k][i] * scale.time * si / scale.cost;
        }
    }
    let keep = bvp::coarsen(&x, &y, &f, 6, tol, 0.1);
    let xs = keep.iter().map(|&k| x[k]).collect();
    let ys = keep.iter().flat_map(|&k| y[6 * k..6 * k + 6].iter().copied()).collect();
    (xs, ys)
}

fn solve_scaled(spec: &OcpSpec, scale: &Scaling, guess: &Trajectory, stage: Option<usize>) -> Result<Trajectory> {
    let (t0, t1) = guess.span();
    let x: Vec<f64> = guess.t.iter().map(|t| (t - t0) / (t1 - t0)).collect();
    let mut y = vec![0.0; 6 * x.len()];
    for k in 0..x.len() {
        scale.to_scaled(&guess.states[k], &guess.costates[k], &mut y[6 * k..6 * k + 6]);
    }
    let (x, y) = if guess.len() > spec.solver.initial_nodes {
        thin_guess(guess, scale, x, y, spec.solver.rel_tol)
    } else {
        (x, y)
    };
    let problem = ScaledProblem { spec, scale: *scale };
    match bvp::solve(&problem, x, y, &spec.solver.bvp_options()) {
        Ok(sol) => Ok(trajectory_from_solution(spec, scale, &sol)),
        Err(BvpFailure::MeshLimit { needed, .. }) => Err(Error::MeshLimitExceeded { needed, limit: spec.solver.max_mesh }),
        Err(failure) => {
            let reason = match failure {
                BvpFailure::Singular { .. } => "singular Newton matrix",
                _ => "collocation residual above tolerance",
            };
            let last = failure.last();
            let residual = last.max_residual().max(last.bc_residual);
            Err(Error::NoConvergence {
                stage,
                reason: reason.to_string(),
                residual,
                last: Some(Box::new(trajectory_from_solution(spec, scale, last))),
            })
        }
    }
}

/// Solves one BVP from `guess`, or from [`OcpSpec::initial_guess`] if none is given.
pub fn solve(spec: &OcpSpec, guess: Option<&Trajectory>) -> Result<Trajectory> {
    spec.validate()?;
    let scale = Scaling::for_spec(spec);
    match guess {
        Some(g) => solve_scaled(spec, &scale, g, None),
        None => solve_scaled(spec, &scale, &spec.initial_guess(), None),
    }
}

/// Failed stages are bisected at most this many times per run.
const MAX_STAGE_SPLITS: usize = 12;

/// Solves the problem by walking through the continuation schedule, each
/// stage warm-started from the previous one. Probability-based problems
/// start from the energy-optimal trajectory with zero costates. A stage that
/// fails is retried after an intermediate stage halfway from the last one
/// that succeeded.
pub fn continuation_solve(spec: &OcpSpec) -> Result<Trajectory> {
    spec.validate()?;
    let scale = Scaling::for_spec(spec);
    let mut current = match spec.mode {
        Mode::Eos => spec.initial_guess(),
        Mode::Pos => {
            let mut eos = spec.clone();
            eos.mode = Mode::Eos;
            let mut start = solve(&eos, None)?;
            start.costates.iter_mut().for_each(|l| *l = Costate::default());
            start.costate_rates.iter_mut().for_each(|d| *d = [0.0; 3]);
            start
        }
    };
    let mut previous: Option<OcpSpec> = None;
    let mut reached: Option<ContinuationStage> = None;
    let mut stages = 0;
    let mut splits = 0;
    let mut queue: Vec<(usize, ContinuationStage)> = spec.solver.continuation.iter().copied().enumerate().rev().collect();
    while let Some((k, stage)) = queue.pop() {
        let staged = spec.staged(&stage);
        if let Some(prev) = &previous {
            if equivalent(prev, &staged) {
                continue;
            }
        }
        match solve_scaled(&staged, &scale, &current, Some(k)) {
            Ok(next) => {
                current = next;
                stages += 1;
                previous = Some(staged);
                reached = Some(stage);
            }
            // Too long a step: retry via the midpoint from the last solved stage.
            Err(e @ (Error::NoConvergence { .. } | Error::MeshLimitExceeded { .. })) => match reached {
                Some(from) if splits < MAX_STAGE_SPLITS => {
                    splits += 1;
                    queue.push((k, stage));
                    queue.push((k, from.midpoint(&stage)));
                }
                _ => return Err(e),
            },
            Err(e) => return Err(e),
        }
    }
    current.diagnostics.stages = stages;
    Ok(current)
}

/// Whether two staged problems have the same solution.
fn equivalent(a: &OcpSpec, b: &OcpSpec) -> bool {
    let same_clamp = a.solver.clamp_sharpness_beta == b.solver.clamp_sharpness_beta;
    match a.mode {
        Mode::Eos => same_clamp,
        Mode::Pos => {
            same_clamp && a.weights == b.weights && a.bounce == b.bounce && a.contact.sigma() == b.contact.sigma()
        }
    }
}

/// Contact statistics and energy of a solved trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `E[V_c]` (m/s).
    pub expected_velocity: f64,
    /// `E[A_c]` with the hard saturation (m/s^2).
    pub expected_acceleration: f64,
    /// `∫ u i dt` (mJ).
    pub energy_mj: f64,
    /// `P(0 <= T_c <= t_f)`.
    pub contact_probability: f64,
}

pub fn evaluate(spec: &OcpSpec, traj: &Trajectory) -> Result<Evaluation> {
    Ok(Evaluation {
        expected_velocity: contact::expected_contact_velocity(traj, &spec.contact)?,
        expected_acceleration: contact::expected_contact_acceleration(
            traj,
            &spec.contact,
            &spec.params,
            &spec.bounce,
            contact::Saturation::Hard,
        )?,
        energy_mj: energy_mj(spec, traj),
        contact_probability: spec.contact.probability(),
    })
}

/// `∫ u i dt` in millijoules with the control rebuilt from the interpolated
/// state and costate, which is more accurate than the nodal trapezoid on the
/// coarse meshes the solver leaves behind.
pub fn energy_mj(spec: &OcpSpec, traj: &Trajectory) -> f64 {
    let p = &spec.params;
    let power = |t: f64| {
        let s = traj.state_at(t);
        let u = spec.optimal_control(&s, &traj.costate_at(t)).unwrap_or_else(|_| traj.control_at(t));
        u * p.coil_current(&s, p.dynamics(&s, u).dalpha)
    };
    quadrature::integrate_pieces(power, &traj.t, 1e-12, 1e-10).value * 1e3
}
