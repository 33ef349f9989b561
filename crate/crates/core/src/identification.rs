//! Parameter identification from square-wave voltage pulses.
//!
//! Each pulse holds a positive voltage for the making motion and then drops
//! to zero for the breaking motion. The pipeline estimates the coil
//! resistance and the flux linkage from the measured voltage and current,
//! locates the making contact from the kink in the current, and then fits
//! the mechanical and magnetic parameters by Nelder-Mead on a cost that
//! compares contact instants and simulated currents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuator::{ActuatorParams, Reluctance, State};
use crate::error::{Error, Result};
use crate::sim::{self, DriveSignal, Recording, SimOptions};

/// Scale of the contact-instant term (s).
pub const T_SCALE: f64 = 3e-3;

/// One measured pulse, uniformly sampled from `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    /// Samples in the positive-voltage segment.
    pub on_samples: usize,
}

impl Pulse {
    /// Splits the pulse where the voltage first falls below half its peak.
    pub fn new(voltage: Vec<f64>, current: Vec<f64>) -> Result<Self> {
        if voltage.len() != current.len() || voltage.len() < 3 {
            return Err(Error::Schema("pulse needs matching voltage and current traces of at least 3 samples".into()));
        }
        let peak = voltage.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return Err(Error::Schema("pulse has no positive-voltage segment".into()));
        }
        let start = voltage.iter().position(|&u| u >= 0.5 * peak).unwrap_or(0);
        let on_samples = voltage[start..].iter().position(|&u| u < 0.5 * peak).map_or(voltage.len(), |k| start + k);
        Ok(Self { voltage, current, on_samples })
    }

    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseDataset {
    pub sample_rate: f64,
    pub pulses: Vec<Pulse>,
}

impl PulseDataset {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if self.pulses.is_empty() {
            return Err(Error::invalid("dataset has no pulses"));
        }
        Ok(())
    }
}

/// The reference protocol: 26 pulses of 25..=50 V, 15 ms on, 15 ms off, 1 MHz.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseProtocol {
    pub amplitudes: Vec<f64>,
    pub on: f64,
    pub off: f64,
    pub sample_rate: f64,
}

impl Default for PulseProtocol {
    fn default() -> Self {
        Self { amplitudes: (25..=50).map(f64::from).collect(), on: 15e-3, off: 15e-3, sample_rate: 1e6 }
    }
}

/// Simulates one pulse; also returns the simulator's own making-contact instant.
pub fn simulate_pulse(p: &ActuatorParams, amplitude: f64, on: f64, off: f64, sample_rate: f64) -> Result<(Pulse, Option<f64>)> {
    let mut opts = SimOptions::new(p.z_min, on + off);
    opts.recording = Recording::Uniform(1.0 / sample_rate);
    let r = sim::integrate(p, &DriveSignal::voltage_pulse(amplitude, on, off), &opts)?;
    let contact = r.impacts.first().map(|c| c.t).filter(|&t| t <= on);
    Ok((Pulse::new(r.voltage, r.current)?, contact))
}

/// Simulated measurements of `protocol` on an actuator with parameters `p`.
pub fn synthetic_dataset(p: &ActuatorParams, protocol: &PulseProtocol) -> Result<PulseDataset> {
    let pulses = protocol
        .amplitudes
        .par_iter()
        .map(|&a| simulate_pulse(p, a, protocol.on, protocol.off, protocol.sample_rate).map(|(pulse, _)| pulse))
        .collect::<Result<Vec<_>>>()?;
    Ok(PulseDataset { sample_rate: protocol.sample_rate, pulses })
}

/// Least-squares `u / i` over the last tenth of each positive segment,
/// where the current has settled; the median over pulses discards pulses
/// whose armature landed too late to settle.
pub fn estimate_resistance(data: &PulseDataset) -> Result<f64> {
    data.validate()?;
    let mut est = Vec::with_capacity(data.pulses.len());
    for (j, p) in data.pulses.iter().enumerate() {
        let end = p.on_samples;
        let start = end - (end / 10).max(1);
        let (mut ui, mut ii) = (0.0, 0.0);
        for k in start..end {
            ui += p.voltage[k] * p.current[k];
            ii += p.current[k] * p.current[k];
        }
        if !(ii > 0.0) {
            return Err(Error::Schema(format!("pulse {j} carries no current in its steady segment")));
        }
        est.push(ui / ii);
    }
    est.sort_by(f64::total_cmp);
    let m = est.len() / 2;
    Ok(if est.len() % 2 == 1 { est[m] } else { 0.5 * (est[m - 1] + est[m]) })
}

/// Cumulative trapezoid of `u - R i` (Wb-turns), zero at the pulse start.
///
/// The flux returns to zero by the end of a complete pulse, so a large
/// residual at the end means the resistance is wrong; it is rejected when it
/// exceeds `drift_fraction` of the peak.
pub fn estimate_flux_linkage(pulse: &Pulse, sample_rate: f64, resistance: f64, drift_fraction: f64) -> Result<Vec<f64>> {
    let dt = 1.0 / sample_rate;
    let mut lam = Vec::with_capacity(pulse.len());
    let mut acc = 0.0;
    lam.push(0.0);
    for k in 1..pulse.len() {
        let e0 = pulse.voltage[k - 1] - resistance * pulse.current[k - 1];
        let e1 = pulse.voltage[k] - resistance * pulse.current[k];
        acc += 0.5 * dt * (e0 + e1);
        lam.push(acc);
    }
    let peak = lam.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = drift_fraction * peak;
    let value = lam[lam.len() - 1].abs();
    if value > bound {
        return Err(Error::DriftExceeded { value, bound });
    }
    Ok(lam)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    /// Savitzky-Golay window in samples (odd).
    pub window: usize,
    /// Motion onset: smoothed `di/dt` below this fraction of its early peak.
    pub onset_fraction: f64,
    /// Extra samples on each side of the kink fit region.
    pub fit_half_width: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self { window: 101, onset_fraction: 0.01, fit_half_width: 50 }
    }
}

/// Savitzky-Golay first derivative (quadratic fit) at interior samples; the
/// first and last `window / 2` entries are NaN.
pub fn smoothed_derivative(y: &[f64], sample_rate: f64, window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut out = vec![f64::NAN; y.len()];
    if y.len() <= 2 * half || half == 0 {
        return out;
    }
    let norm: f64 = (1..=half).map(|k| 2.0 * (k * k) as f64).sum();
    for (j, o) in out.iter_mut().enumerate().take(y.len() - half).skip(half) {
        let mut s = 0.0;
        for k in 1..=half {
            s += k as f64 * (y[j + k] - y[j - k]);
        }
        *o = s / norm * sample_rate;
    }
    out
}

/// Residual of the least-squares quadratic through `y` at unit spacing.
fn quadratic_sse(y: &[f64]) -> f64 {
    let n = y.len();
    if n <= 3 {
        return 0.0;
    }
    // Orthogonal polynomials on the centred grid keep the fit well conditioned.
    let c = 0.5 * (n as f64 - 1.0);
    let q0 = (n * n - 1) as f64 / 12.0;
    let p1 = |k: usize| k as f64 - c;
    let p2 = |k: usize| p1(k) * p1(k) - q0;
    let (mut s0, mut s1, mut s2, mut n1, mut n2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &v) in y.iter().enumerate() {
        s0 += v;
        s1 += v * p1(k);
        s2 += v * p2(k);
        n1 += p1(k) * p1(k);
        n2 += p2(k) * p2(k);
    }
    let m = s0 / n as f64;
    let total: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    (total - s1 * s1 / n1 - s2 * s2 / n2).max(0.0)
}

/// Making-contact instant (s) in the first `on_samples` of a current trace:
/// after the current starts falling with the motion, the first point where
/// the smoothed slope turns positive, refined to the kink that best splits
/// the raw trace into two fitted arcs. `None` if the armature never moves.
pub fn detect_contact_instant(current: &[f64], sample_rate: f64, on_samples: usize, opts: &DetectOptions) -> Option<f64> {
    let seg = &current[..on_samples.min(current.len())];
    let d = smoothed_derivative(seg, sample_rate, opts.window);
    let peak = d.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, &v| m.max(v));
    if !(peak > 0.0) {
        return None;
    }
    let onset = d.iter().position(|&v| v < -opts.onset_fraction * peak)?;
    let k0 = onset + d[onset..].iter().position(|&v| v > 0.0)?;
    // Split a fixed region around the candidate into two fitted arcs.
    let half = opts.window / 2;
    let l = opts.fit_half_width;
    let start = k0.saturating_sub(half + l);
    let end = (k0 + half + l).min(seg.len() - 1);
    let lo = (start + 2).max(k0.saturating_sub(half));
    let hi = (end.saturating_sub(2)).min(k0 + half);
    let split = |a: usize| quadratic_sse(&seg[start..=a]) + quadratic_sse(&seg[a..=end]);
    let b = (lo..=hi).min_by(|&a, &b| split(a).total_cmp(&split(b))).unwrap_or(k0);
    // Sub-sample position from a parabola through the neighbouring errors.
    let mut offset = 0.0;
    if b > lo && b < hi {
        let (sm, s0, sp) = (split(b - 1), split(b), split(b + 1));
        let curv = sm - 2.0 * s0 + sp;
        if curv > 0.0 {
            offset = (0.5 * (sm - sp) / curv).clamp(-0.5, 0.5);
        }
    }
    Some((b as f64 + offset) / sample_rate)
}

/// `(t_sim - t_exp)^2 / t_scale^2`, with a missing contact counted as `t = 0`.
pub fn contact_term(t_sim: Option<f64>, t_exp: Option<f64>) -> f64 {
    let d = t_sim.unwrap_or(0.0) - t_exp.unwrap_or(0.0);
    d * d / (T_SCALE * T_SCALE)
}

/// `sum (i_sim - i_exp)^2 / sum i_exp^2`.
pub fn current_term(i_sim: &[f64], i_exp: &[f64]) -> f64 {
    let num: f64 = i_sim.iter().zip(i_exp).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = i_exp.iter().map(|v| v * v).sum();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Per-pulse quantities derived once from the measurements.
#[derive(Clone, Debug)]
struct Prepared {
    alpha: Vec<f64>,
    contact: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentificationOptions {
    pub drift_fraction: f64,
    pub detect: DetectOptions,
    /// Integration step in samples.
    pub step_samples: usize,
}

impl Default for IdentificationOptions {
    fn default() -> Self {
        Self { drift_fraction: 0.05, detect: DetectOptions::default(), step_samples: 2 }
    }
}

/// Result of simulating one pulse for the cost.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseFit {
    pub contact: Option<f64>,
    pub current: Vec<f64>,
}

/// A dataset prepared for repeated cost evaluations.
#[derive(Clone, Debug)]
pub struct Identification {
    pub data: PulseDataset,
    pub resistance: f64,
    pub options: IdentificationOptions,
    prepared: Vec<Prepared>,
}

impl Identification {
    pub fn new(data: PulseDataset, coil_turns: f64, options: IdentificationOptions) -> Result<Self> {
        data.validate()?;
        if options.step_samples == 0 {
            return Err(Error::invalid("step must span at least one sample"));
        }
        let resistance = estimate_resistance(&data)?;
        let prepared = data
            .pulses
            .iter()
            .map(|p| {
                let lam = estimate_flux_linkage(p, data.sample_rate, resistance, options.drift_fraction)?;
                Ok(Prepared {
                    alpha: lam.iter().map(|l| l / coil_turns).collect(),
                    contact: detect_contact_instant(&p.current, data.sample_rate, p.on_samples, &options.detect),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { data, resistance, options, prepared })
    }

    /// Contact instants detected in the measurements.
    pub fn measured_contacts(&self) -> Vec<Option<f64>> {
        self.prepared.iter().map(|p| p.contact).collect()
    }

    /// Mechanical subsystem driven by the measured flux, electromagnetic
    /// subsystem driven by the measured voltage and the simulated motion.
    pub fn simulate(&self, params: &ActuatorParams, j: usize) -> Result<PulseFit> {
        let pulse = &self.data.pulses[j];
        let alpha_exp = &self.prepared[j].alpha;
        let limit = params.reluctance.flux_limit();
        if alpha_exp.iter().any(|a| a.abs() >= limit) {
            return Err(Error::FluxOutOfRange { alpha: alpha_exp.iter().fold(0.0, |m, a| m.max(a.abs())), limit });
        }
        let dt = 1.0 / self.data.sample_rate;
        let stride = self.options.step_samples;
        let h = stride as f64 * dt;
        let n = pulse.len();
        // Linear interpolation of sampled inputs at fractional sample index.
        let at = |v: &[f64], x: f64| {
            let k = (x.floor() as usize).min(n - 2);
            let s = x - k as f64;
            v[k] + s * (v[k + 1] - v[k])
        };
        let (z_min, z_max) = (params.z_min, params.z_max);
        let rhs = |x: f64, y: &[f64; 3]| -> [f64; 3] {
            let s = State::new(y[0], y[1], y[2]);
            let a = params.acceleration(y[0], y[1], at(alpha_exp, x));
            let da = params.dynamics(&s, at(&pulse.voltage, x)).dalpha;
            [y[1], a, da]
        };
        let mut y = [z_max, 0.0, 0.0];
        let mut held = Some(z_max);
        let mut contact = None;
        let mut current = Vec::with_capacity(n / stride + 1);
        let mut k = 0;
        loop {
            let x = k as f64;
            let s = State::new(y[0], y[1], y[2]);
            let da = params.dynamics(&s, pulse.voltage[k]).dalpha;
            current.push(params.coil_current(&s, da));
            if k + stride >= n {
                break;
            }
            let f = |x: f64, y: &[f64; 3]| {
                let mut d = rhs(x, y);
                if held.is_some() {
                    d[0] = 0.0;
                    d[1] = 0.0;
                }
                d
            };
            let xs = stride as f64;
            let k1 = f(x, &y);
            let k2 = f(x + 0.5 * xs, &axpy(&y, 0.5 * h, &k1));
            let k3 = f(x + 0.5 * xs, &axpy(&y, 0.5 * h, &k2));
            let k4 = f(x + xs, &axpy(&y, h, &k3));
            let mut next = y;
            for i in 0..3 {
                next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::SimulationFailure(format!("pulse {j} diverged at t = {:e} s", x * dt)));
            }
            match held {
                Some(stop) => {
                    let a = params.acceleration(stop, 0.0, at(alpha_exp, x + xs));
                    let leaves = if stop == z_min { a > 0.0 } else { a < 0.0 };
                    if leaves {
                        held = None;
                    }
                }
                None if next[0] <= z_min => {
                    let frac = (y[0] - z_min) / (y[0] - next[0]);
                    if contact.is_none() && k + stride <= pulse.on_samples {
                        contact = Some((x + frac * xs) * dt);
                    }
                    next[0] = z_min;
                    next[1] = 0.0;
                    held = Some(z_min);
                }
                None if next[0] >= z_max => {
                    next[0] = z_max;
                    next[1] = 0.0;
                    held = Some(z_max);
                }
                None => {}
            }
            y = next;
            k += stride;
        }
        Ok(PulseFit { contact, current })
    }

    /// Contact and current terms of pulse `j`.
    pub fn pulse_terms(&self, params: &ActuatorParams, j: usize) -> Result<(f64, f64)> {
        let fit = self.simulate(params, j)?;
        let measured: Vec<f64> = self.data.pulses[j].current.iter().step_by(self.options.step_samples).copied().collect();
        Ok((contact_term(fit.contact, self.prepared[j].contact), current_term(&fit.current, &measured)))
    }

    /// Sum over pulses of the contact-instant and current terms.
    pub fn cost(&self, params: &ActuatorParams) -> Result<f64> {
        let terms = (0..self.data.pulses.len())
            .into_par_iter()
            .map(|j| self.pulse_terms(params, j).map(|(a, b)| a + b))
            .collect::<Result<Vec<_>>>()?;
        Ok(terms.iter().sum())
    }
}

fn axpy(y: &[f64; 3], a: f64, x: &[f64; 3]) -> [f64; 3] {
    [y[0] + a * x[0], y[1] + a * x[1], y[2] + a * x[2]]
}

/// Identification cost of `params` on `data` with default options.
pub fn identification_cost(params: &ActuatorParams, data: &PulseDataset) -> Result<f64> {
    Identification::new(data.clone(), params.coil_turns, IdentificationOptions::default())?.cost(params)
}

/// Names of the fitted parameters, in vector order. The spring enters as
/// stiffness and preload at the open stop, `k_s (z_s - z_max)`: over the
/// short stroke `k_s` and `z_s` alone are nearly collinear.
pub const FITTED: [&str; 7] = ["m", "k_s", "preload", "c_f", "k_1", "k_2", "k_ec"];

fn to_vector(p: &ActuatorParams) -> Result<[f64; 7]> {
    let (k1, k2) = match p.reluctance {
        Reluctance::SaturableCore { k1, k2, .. } => (k1, k2),
        Reluctance::Tabulated(_) => return Err(Error::invalid("fitting needs the parametric reluctance family")),
    };
    let preload = p.spring_stiffness * (p.spring_rest - p.z_max);
    let v = [p.mass, p.spring_stiffness, preload, p.friction, k1, k2, p.eddy];
    if v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::invalid("fitted parameters must all be positive"));
    }
    Ok(v)
}

fn from_vector(base: &ActuatorParams, v: &[f64; 7]) -> ActuatorParams {
    let mut p = base.clone();
    p.mass = v[0];
    p.spring_stiffness = v[1];
    p.spring_rest = p.z_max + v[2] / v[1];
    p.friction = v[3];
    if let Reluctance::SaturableCore { k1, k2, .. } = &mut p.reluctance {
        *k1 = v[4];
        *k2 = v[5];
    }
    p.eddy = v[6];
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_evaluations: usize,
    /// Initial simplex edge in log-parameter space.
    pub initial_step: f64,
    /// Stop once the best cost is at or below this (0 disables).
    pub target_cost: f64,
    /// Relative spread of simplex costs that counts as converged.
    pub f_tol: f64,
    /// Spread of simplex vertices (log space) that counts as converged.
    pub x_tol: f64,
    /// Fresh simplices built around the best point after convergence.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 4000,
            initial_step: 0.1,
            target_cost: 0.0,
            f_tol: 1e-8,
            x_tol: 1e-6,
            restarts: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub params: ActuatorParams,
    pub resistance: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
    /// `t_sim - t_exp` per pulse (s); `None` where either side has no contact.
    pub contact_errors: Vec<Option<f64>>,
    /// Normalized current residual per pulse.
    pub current_residuals: Vec<f64>,
    /// Best cost after each iteration.
    pub trace: Vec<f64>,
}

/// Fits `{m, k_s, z_s, c_f, k_1, k_2, k_ec}` by Nelder-Mead in log space with
/// the resistance fixed at its estimate.
pub fn fit(problem: &Identification, initial: &ActuatorParams, opts: &FitOptions) -> Result<FitReport> {
    initial.validate()?;
    let x0 = to_vector(initial)?.map(f64::ln);
    let mut base = initial.clone();
    base.resistance = problem.resistance;
    let mut evaluations = 0usize;
    // `None` once the budget is spent; failed simulations cost +inf.
    let mut eval = |x: &[f64; 7]| -> Option<f64> {
        if evaluations >= opts.max_evaluations {
            return None;
        }
        evaluations += 1;
        let p = from_vector(&base, &x.map(f64::exp));
        Some(match p.validate().and_then(|_| problem.cost(&p)) {
            Ok(c) if c.is_finite() => c,
            _ => f64::INFINITY,
        })
    };
    let initial_cost = eval(&x0).ok_or_else(|| Error::invalid("evaluation budget must be positive"))?;
    if !initial_cost.is_finite() {
        return Err(Error::invalid("cost is not finite at the initial parameters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = (x0, initial_cost);
    let mut trace = vec![initial_cost];
    let mut iterations = 0;
    let mut converged = initial_cost <= opts.target_cost;
    let mut budget_hit = false;
    let mut round = 0;
    while !converged && !budget_hit {
        let run = nelder_mead(&mut eval, best, opts, &mut rng, &mut trace, &mut iterations);
        let gain = best.1 - run.best.1;
        best = run.best;
        budget_hit = run.budget_hit;
        round += 1;
        // A restart that gains nothing confirms the minimum.
        let settled = round > 1 && gain <= opts.f_tol * best.1.abs();
        converged = best.1 <= opts.target_cost || (run.converged && (settled || round > opts.restarts));
    }
    let params = from_vector(&base, &best.0.map(f64::exp));
    let measured = problem.measured_contacts();
    let (contact_errors, current_residuals) = (0..problem.data.pulses.len())
        .map(|j| match problem.simulate(&params, j) {
            Ok(fit) => {
                let i_exp: Vec<f64> = problem.data.pulses[j].current.iter().step_by(problem.options.step_samples).copied().collect();
                (fit.contact.zip(measured[j]).map(|(a, b)| a - b), current_term(&fit.current, &i_exp))
            }
            Err(_) => (None, f64::INFINITY),
        })
        .unzip();
    let report = FitReport {
        params,
        resistance: problem.resistance,
        initial_cost,
        final_cost: best.1,
        evaluations,
        iterations,
        converged,
        contact_errors,
        current_residuals,
        trace,
    };
    if !report.converged {
        return Err(Error::BudgetExhausted(Box::new(report)));
    }
    Ok(report)
}

struct Run {
    best: ([f64; 7], f64),
    converged: bool,
    budget_hit: bool,
}

/// One Nelder-Mead run from a fresh simplex around `start`. Axis steps get
/// random signs from `rng`, so different seeds orient the simplex
/// differently.
fn nelder_mead<F>(f: &mut F, start: ([f64; 7], f64), opts: &FitOptions, rng: &mut ChaCha8Rng, trace: &mut Vec<f64>, iterations: &mut usize) -> Run
where
    F: FnMut(&[f64; 7]) -> Option<f64>,
{
    const N: usize = 7;
    let out_of_budget = |simplex: &[([f64; N], f64)]| Run {
        best: *simplex.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap(),
        converged: false,
        budget_hit: true,
    };
    let mut simplex: Vec<([f64; N], f64)> = vec![start];
    for i in 0..N {
        let mut x = start.0;
        x[i] += if rng.random::<bool>() { opts.initial_step } else { -opts.initial_step };
        let Some(fx) = f(&x) else { return out_of_budget(&simplex) };
        simplex.push((x, fx));
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0];
        let worst = simplex[N];
        let f_spread = worst.1 - best.1;
        let x_spread = simplex[1..].iter().flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        if best.1 <= opts.target_cost || x_spread <= opts.x_tol || f_spread <= opts.f_tol * best.1.abs() {
            return Run { best, converged: true, budget_hit: false };
        }
        *iterations += 1;
        let mut centroid = [0.0; N];
        for (x, _) in &simplex[..N] {
            for i in 0..N {
                centroid[i] += x[i] / N as f64;
            }
        }
        let along = |t: f64| std::array::from_fn::<f64, N, _>(|i| centroid[i] + t * (worst.0[i] - centroid[i]));
        let xr = along(-1.0);
        let Some(fr) = f(&xr) else { return out_of_budget(&simplex) };
        if fr < best.1 {
            let xe = along(-2.0);
            let Some(fe) = f(&xe) else { return out_of_budget(&simplex) };
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
        } else {
            let xc = along(if fr < worst.1 { -0.5 } else { 0.5 });
            let Some(fc) = f(&xc) else { return out_of_budget(&simplex) };
            if fc < worst.1.min(fr) {
                simplex[N] = (xc, fc);
            } else {
                for v in 1..=N {
                    let x = std::array::from_fn(|i| best.0[i] + 0.5 * (simplex[v].0[i] - best.0[i]));
                    let Some(fx) = f(&x) else { return out_of_budget(&simplex) };
                    simplex[v] = (x, fx);
                }
            }
        }
        let low = simplex.iter().fold(f64::INFINITY, |m, v| m.min(v.1));
        let prev = *trace.last().unwrap_or(&f64::INFINITY);
        trace.push(low.min(prev));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flux_of_pure_resistive_trace_is_zero() {
        let current = vec![0.5; 100];
        let voltage = vec![6.0; 100];
        let mut pulse = Pulse::new(voltage, current).unwrap();
        pulse.on_samples = 100;
        let lam = estimate_flux_linkage(&pulse, 1e6, 12.0, 0.05).unwrap();
        assert!(lam.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn flux_of_constant_excess_is_linear() {
        let pulse = Pulse { voltage: vec![7.0; 11], current: vec![0.5; 11], on_samples: 11 };
        let lam = estimate_flux_linkage(&pulse, 1e3, 12.0, 10.0).unwrap();
        for (k, l) in lam.iter().enumerate() {
            assert!((l - 1.0 * k as f64 * 1e-3).abs() < 1e-15);
        }
        assert!(matches!(estimate_flux_linkage(&pulse, 1e3, 12.0, 0.05), Err(Error::DriftExceeded { .. })));
    }

    #[test]
    fn savitzky_golay_is_exact_on_quadratics() {
        let y: Vec<f64> = (0..300).map(|k| 3.0 + 2.0 * k as f64 + 0.01 * (k * k) as f64).collect();
        let d = smoothed_derivative(&y, 1.0, 101);
        for k in 50..250 {
            assert!((d[k] - (2.0 + 0.02 * k as f64)).abs() < 1e-9);
        }
        assert!(d[10].is_nan());
    }

    #[test]
    fn kink_is_located_by_split_fit() {
        let fs = 1e6;
        let kink = 700;
        let i: Vec<f64> = (0..2000)
            .map(|k| {
                let k = k as f64;
                if k < 200.0 {
                    0.002 * k
                } else if k < kink as f64 {
                    0.4 - 0.0002 * (k - 200.0)
                } else {
                    0.3 + 0.0003 * (k - kink as f64)
                }
            })
            .collect();
        let t = detect_contact_instant(&i, fs, 2000, &DetectOptions::default()).unwrap();
        assert!((t * fs - kink as f64).abs() <= 1.0, "{}", t * fs);
        let shifted: Vec<f64> = i.iter().map(|v| v + 3.0).collect();
        let t_shifted = detect_contact_instant(&shifted, fs, 2000, &DetectOptions::default()).unwrap();
        assert!((t_shifted - t).abs() * fs < 1e-3);
    }

    #[test]
    fn rising_current_has_no_contact() {
        let i: Vec<f64> = (0..3000).map(|k| 1.0 - (-(k as f64) / 800.0).exp()).collect();
        assert_eq!(detect_contact_instant(&i, 1e6, 3000, &DetectOptions::default()), None);
    }

    #[test]
    fn cost_terms() {
        assert_eq!(contact_term(None, None), 0.0);
        assert!((contact_term(Some(4e-3), Some(1e-3)) - 1.0).abs() < 1e-12);
        assert!((contact_term(Some(4e-3 + 1.0), Some(1e-3 + 1.0)) - contact_term(Some(4e-3), Some(1e-3))).abs() < 1e-9);
        let a = [1.0, 2.0, 3.0];
        let b = [1.5, 2.0, 2.0];
        let scaled = current_term(&a.map(|v| 7.0 * v), &b.map(|v| 7.0 * v));
        assert!((scaled - current_term(&a, &b)).abs() < 1e-15);
    }

    #[test]
    fn pulse_split_at_voltage_drop() {
        let p = Pulse::new(vec![30.0, 30.0, 30.0, 0.0, 0.0], vec![0.0; 5]).unwrap();
        assert_eq!(p.on_samples, 3);
    }
}
