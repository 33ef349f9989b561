//! Hybrid forward simulation, Monte Carlo contact statistics and the
//! `sigma_z` sweep.
//!
//! The armature moves freely between the contact position `z_c` and the
//! upper stop `z_max`. At `z_c` the velocity is reflected with restitution
//! `e`; with `e = 0` the armature sticks until the net force pulls it away
//! again. The upper stop always absorbs the impact.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuator::{ActuatorParams, State};
use crate::contact::{self, BounceConfig, ContactModel};
use crate::cost::total_cost;
use crate::error::{Error, Result};
use crate::ocp::{self, Mode, OcpSpec};
use crate::ode::{self, DenseStep, Flow, OdeOptions};
use crate::trajectory::{trapezoid, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveKind {
    /// Coil voltage (V).
    Voltage,
    /// Coil current (A); needs `k_ec > 0`.
    Current,
}

/// Piecewise-linear voltage or current input.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveSignal {
    pub kind: DriveKind,
    times: Vec<f64>,
    values: Vec<f64>,
    ramp_in: f64,
    ramp_out: f64,
}

impl DriveSignal {
    pub fn new(kind: DriveKind, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::invalid("drive needs matching, non-empty time and value samples"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("drive sample times must be strictly increasing"));
        }
        if values.iter().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::invalid("drive samples must be finite"));
        }
        Ok(Self { kind, times, values, ramp_in: 0.0, ramp_out: 0.0 })
    }

    pub fn constant(kind: DriveKind, value: f64) -> Self {
        Self { kind, times: vec![0.0], values: vec![value], ramp_in: 0.0, ramp_out: 0.0 }
    }

    /// `amplitude` volts for `on` seconds, then zero for `off` seconds.
    pub fn voltage_pulse(amplitude: f64, on: f64, off: f64) -> Self {
        let edge = 1e-9;
        Self {
            kind: DriveKind::Voltage,
            times: vec![0.0, on, on + edge, on + off],
            values: vec![amplitude, amplitude, 0.0, 0.0],
            ramp_in: 0.0,
            ramp_out: 0.0,
        }
    }

    /// Open-loop replay of a planned trajectory's voltage or current.
    pub fn from_trajectory(traj: &Trajectory, kind: DriveKind) -> Result<Self> {
        let values = match kind {
            DriveKind::Voltage => traj.control.clone(),
            DriveKind::Current => traj.current.clone(),
        };
        Self::new(kind, traj.t.clone(), values)
    }

    /// Dense replay of a solved trajectory: `samples` uniform points with the
    /// control rebuilt from the interpolated state and costate.
    pub fn from_solution(spec: &OcpSpec, traj: &Trajectory, kind: DriveKind, samples: usize) -> Result<Self> {
        let (t0, t1) = traj.span();
        let samples = samples.max(2);
        let p = &spec.params;
        let mut times = Vec::with_capacity(samples);
        let mut values = Vec::with_capacity(samples);
        for k in 0..samples {
            let t = t0 + (t1 - t0) * k as f64 / (samples - 1) as f64;
            let s = traj.state_at(t);
            let u = spec.optimal_control(&s, &traj.costate_at(t))?;
            times.push(t);
            values.push(match kind {
                DriveKind::Voltage => u,
                DriveKind::Current => p.coil_current(&s, p.dynamics(&s, u).dalpha),
            });
        }
        Self::new(kind, times, values)
    }

    /// Reads `t,value` rows.
    pub fn from_csv(path: &Path, kind: DriveKind) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != 2 {
                return Err(Error::Schema(format!("{}: expected 2 columns (t, value)", path.display())));
            }
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Schema(format!("{}: {e}", path.display())));
            times.push(parse(&row[0])?);
            values.push(parse(&row[1])?);
        }
        Self::new(kind, times, values)
    }

    /// Constant-slope transitions from and to zero at both ends of the samples.
    pub fn with_ramps(mut self, ramp_in: f64, ramp_out: f64) -> Self {
        self.ramp_in = ramp_in.max(0.0);
        self.ramp_out = ramp_out.max(0.0);
        self
    }

    pub fn end_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn base(&self, t: f64) -> f64 {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let k = self.times.partition_point(|&x| x <= t) - 1;
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.values[k] + s * (self.values[k + 1] - self.values[k])
    }

    pub fn value(&self, t: f64) -> f64 {
        let mut v = self.base(t);
        if self.ramp_in > 0.0 {
            v *= ((t - self.times[0]) / self.ramp_in).clamp(0.0, 1.0);
        }
        if self.ramp_out > 0.0 && self.times.len() > 1 {
            v *= ((self.end_time() - t) / self.ramp_out).clamp(0.0, 1.0);
        }
        v
    }

    /// Times where the signal has a corner that the integrator should not step over.
    fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::new();
        if self.times.len() <= 64 {
            b.extend_from_slice(&self.times);
        }
        if self.ramp_in > 0.0 {
            b.push(self.times[0] + self.ramp_in);
        }
        if self.ramp_out > 0.0 {
            b.push(self.end_time() - self.ramp_out);
        }
        b
    }
}

/// Output sampling of a simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Recording {
    /// Every accepted integrator step and every event.
    Steps,
    /// A uniform grid with the given spacing.
    Uniform(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub ode: OdeOptions,
    /// Contact position (m).
    pub z_c: f64,
    /// Coefficient of restitution at `z_c`.
    pub restitution: f64,
    pub t_end: f64,
    /// Defaults to rest at `z_max` with zero flux.
    pub initial: Option<State>,
    pub recording: Recording,
}

impl SimOptions {
    pub fn new(z_c: f64, t_end: f64) -> Self {
        Self { ode: OdeOptions::default(), z_c, restitution: 0.0, t_end, initial: None, recording: Recording::Steps }
    }
}

/// One impact at the contact position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impact {
    pub t: f64,
    /// Velocity just before the impact.
    pub velocity: f64,
    pub state: State,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimResult {
    pub t: Vec<f64>,
    pub states: Vec<State>,
    pub rates: Vec<[f64; 3]>,
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    pub impacts: Vec<Impact>,
    pub z_c: f64,
}

impl SimResult {
    /// First impact, or [`Error::EventNotBracketed`] if the armature never got there.
    pub fn contact(&self) -> Result<&Impact> {
        self.impacts.first().ok_or(Error::EventNotBracketed { z_c: self.z_c })
    }

    /// Impacts after the first one.
    pub fn bounces(&self) -> usize {
        self.impacts.len().saturating_sub(1)
    }

    /// Trapezoidal `∫ u i dt` in millijoules.
    pub fn energy_mj(&self) -> f64 {
        let p: Vec<f64> = self.voltage.iter().zip(&self.current).map(|(u, i)| u * i).collect();
        trapezoid(&self.t, &p) * 1e3
    }

    /// The recorded path as an interpolable trajectory.
    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let mut t = Vec::with_capacity(self.t.len());
        let mut keep = Vec::with_capacity(self.t.len());
        for (k, &tk) in self.t.iter().enumerate() {
            if t.last().is_none_or(|&last| tk > last) {
                t.push(tk);
                keep.push(k);
            }
        }
        let mut tr = Trajectory::from_states(
            t,
            keep.iter().map(|&k| self.states[k]).collect(),
            keep.iter().map(|&k| self.rates[k]).collect(),
        )?;
        tr.control = keep.iter().map(|&k| self.voltage[k]).collect();
        tr.current = keep.iter().map(|&k| self.current[k]).collect();
        Ok(tr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Free,
    /// Held at the contact position.
    Low,
    /// Held at the upper stop.
    High,
}

struct Hybrid<'a> {
    p: &'a ActuatorParams,
    drive: &'a DriveSignal,
    z_c: f64,
}

impl Hybrid<'_> {
    fn flux_rate(&self, t: f64, s: &State) -> f64 {
        match self.drive.kind {
            DriveKind::Voltage => self.p.dynamics(s, self.drive.value(t)).dalpha,
            DriveKind::Current => {
                (self.p.coil_turns * self.drive.value(t) - self.p.total_reluctance(s.z, s.alpha) * s.alpha) / self.p.eddy
            }
        }
    }

    fn rhs(&self, phase: Phase, t: f64, y: &[f64; 3]) -> [f64; 3] {
        let s = State::from_slice(y);
        let da = self.flux_rate(t, &s);
        match phase {
            Phase::Free => [s.v, self.p.acceleration(s.z, s.v, s.alpha), da],
            Phase::Low | Phase::High => [0.0, 0.0, da],
        }
    }

    /// Voltage and current at a state.
    fn electrical(&self, t: f64, s: &State, da: f64) -> (f64, f64) {
        match self.drive.kind {
            DriveKind::Voltage => (self.drive.value(t), self.p.coil_current(s, da)),
            DriveKind::Current => {
                let i = self.drive.value(t);
                (self.p.resistance * i + self.p.coil_turns * da, i)
            }
        }
    }

    fn phase_at(&self, s: &State) -> Phase {
        let a = self.p.acceleration(s.z, s.v, s.alpha);
        if s.z >= self.p.z_max && s.v >= 0.0 && a >= 0.0 {
            Phase::High
        } else if s.z <= self.z_c && s.v <= 0.0 && a <= 0.0 {
            Phase::Low
        } else {
            Phase::Free
        }
    }
}

/// Simulates the constrained actuator under `drive`.
pub fn integrate(p: &ActuatorParams, drive: &DriveSignal, opts: &SimOptions) -> Result<SimResult> {
    p.validate()?;
    if drive.kind == DriveKind::Current && p.eddy <= 0.0 {
        return Err(Error::invalid("current drive requires k_ec > 0"));
    }
    if !(0.0..=1.0).contains(&opts.restitution) {
        return Err(Error::invalid(format!("restitution must lie in [0, 1], got {}", opts.restitution)));
    }
    if !(opts.t_end > 0.0) {
        return Err(Error::invalid("t_end must be positive"));
    }
    let sys = Hybrid { p, drive, z_c: opts.z_c };
    let mut state = opts.initial.unwrap_or(State::new(p.z_max, 0.0, 0.0));
    let mut phase = sys.phase_at(&state);
    let mut t = 0.0;
    let mut out = SimResult { z_c: opts.z_c, ..Default::default() };

    let mut stops: Vec<f64> = drive.breakpoints().into_iter().filter(|&b| b > 0.0 && b < opts.t_end).collect();
    stops.push(opts.t_end);
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let record = |out: &mut SimResult, t: f64, s: State, phase: Phase| {
        let r = sys.rhs(phase, t, &s.to_array());
        let (u, i) = sys.electrical(t, &s, r[2]);
        out.t.push(t);
        out.states.push(s);
        out.rates.push(r);
        out.voltage.push(u);
        out.current.push(i);
    };
    let mut next_sample = 0usize;
    let sample_dt = match opts.recording {
        Recording::Uniform(dt) => Some(dt),
        Recording::Steps => None,
    };
    let emit = |out: &mut SimResult, step: &DenseStep<3>, phase: Phase, next: &mut usize, upto: f64, inclusive: bool| {
        if let Some(dt) = sample_dt {
            loop {
                let ts = *next as f64 * dt;
                let inside = if inclusive { ts <= upto } else { ts < upto };
                if !inside || ts > opts.t_end + 1e-12 * dt {
                    break;
                }
                if ts >= step.t0 {
                    record(out, ts, State::from_slice(&step.eval(ts)), phase);
                }
                *next += 1;
            }
        }
    };
    if sample_dt.is_none() {
        record(&mut out, t, state, phase);
    }

    let mut guard = 0;
    while t < opts.t_end {
        guard += 1;
        if guard > 100_000 {
            return Err(Error::SimulationFailure("too many hybrid transitions".into()));
        }
        let seg_end = *stops.iter().find(|&&b| b > t + 1e-15).unwrap_or(&opts.t_end);
        let mut event: Option<Phase> = None;
        let mut impact = false;
        let z_c = opts.z_c;
        let z_max = p.z_max;
        let (t_stop, y_stop) = ode::integrate(
            |tt, y| sys.rhs(phase, tt, y),
            t,
            state.to_array(),
            seg_end,
            &opts.ode,
            |step| {
                let hit = match phase {
                    Phase::Free => {
                        let low = locate(step, |y| z_c - y[0]);
                        let high = locate(step, |y| y[0] - z_max);
                        match (low, high) {
                            (Some(a), Some(b)) if b < a => Some((b, false)),
                            (Some(a), _) => Some((a, true)),
                            (None, Some(b)) => Some((b, false)),
                            (None, None) => None,
                        }
                    }
                    Phase::Low => release(step, |y| p.acceleration(z_c, 0.0, y[2])),
                    Phase::High => release(step, |y| -p.acceleration(z_max, 0.0, y[2])),
                };
                match hit {
                    None => {
                        emit(&mut out, step, phase, &mut next_sample, step.t1, false);
                        if sample_dt.is_none() {
                            record(&mut out, step.t1, State::from_slice(&step.y1), phase);
                        }
                        Flow::Continue
                    }
                    Some((te, low)) => {
                        let ye = if te == step.t1 { step.y1 } else { step.eval(te) };
                        emit(&mut out, step, phase, &mut next_sample, te, false);
                        event = Some(phase);
                        impact = low;
                        Flow::Stop(te, ye)
                    }
                }
            },
        )?;
        t = t_stop;
        state = State::from_slice(&y_stop);
        match event {
            None => {
                // Segment end at a drive breakpoint or at t_end.
                if t >= opts.t_end {
                    if let Some(dt) = sample_dt {
                        let ts = next_sample as f64 * dt;
                        if ts <= opts.t_end + 1e-12 * dt && (ts - t).abs() <= 1e-9 * dt.max(1e-12) + 1e-15 {
                            record(&mut out, ts, state, phase);
                        }
                    }
                }
                phase = sys.phase_at(&state).max_free(phase);
            }
            Some(Phase::Free) => {
                if impact {
                    state.z = opts.z_c;
                    out.impacts.push(Impact { t, velocity: state.v, state });
                    state.v = -opts.restitution * state.v;
                    if state.v.abs() < 1e-6 {
                        // The held phase decides whether the armature lifts off.
                        state.v = 0.0;
                        phase = Phase::Low;
                    }
                } else {
                    state.z = p.z_max;
                    state.v = 0.0;
                    phase = Phase::High;
                }
                if sample_dt.is_none() {
                    record(&mut out, t, state, phase);
                }
            }
            Some(_) => {
                phase = Phase::Free;
                if sample_dt.is_none() {
                    record(&mut out, t, state, phase);
                }
            }
        }
    }
    Ok(out)
}

/// Earliest time in the step where `g` turns positive, found on a sampled
/// bracket so a path that starts on the boundary and leaves it is not
/// mistaken for an immediate crossing.
fn locate<G: Fn(&[f64; 3]) -> f64>(step: &DenseStep<3>, g: G) -> Option<f64> {
    const PROBES: usize = 16;
    let h = step.t1 - step.t0;
    let mut prev = step.t0;
    for k in 1..=PROBES {
        let tk = if k == PROBES { step.t1 } else { step.t0 + h * k as f64 / PROBES as f64 };
        let yk = if k == PROBES { step.y1 } else { step.eval(tk) };
        if g(&yk) > 0.0 {
            return Some(ode::find_root(|t| g(&step.eval(t)), prev, tk, 1e-13));
        }
        prev = tk;
    }
    None
}

/// Release from a stop when the net force `g` points away from it. A force
/// that already points away at the start of the step releases at its end if
/// it still does there, which guarantees progress and keeps a grazing
/// contact held.
fn release<G: Fn(&[f64; 3]) -> f64>(step: &DenseStep<3>, g: G) -> Option<(f64, bool)> {
    if g(&step.y0) > 0.0 {
        return (g(&step.y1) > 0.0).then_some((step.t1, false));
    }
    locate(step, g).map(|t| (t, false))
}

impl Phase {
    /// Keeps a held phase across a drive breakpoint.
    fn max_free(self, previous: Phase) -> Phase {
        match previous {
            Phase::Free => self,
            held => held,
        }
    }
}

/// Position-integrated quantity tracked for Monte Carlo aggregation.
#[derive(Clone, Copy, Debug, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    /// Standard error of the mean.
    pub se: f64,
}

fn moments(values: &[f64]) -> Moments {
    let n = values.len();
    if n == 0 {
        return Moments { mean: f64::NAN, std: f64::NAN, se: f64::NAN };
    }
    let mut s = Kahan::default();
    values.iter().for_each(|&v| s.add(v));
    let mean = s.sum / n as f64;
    let mut q = Kahan::default();
    values.iter().for_each(|&v| q.add((v - mean) * (v - mean)));
    let std = if n > 1 { (q.sum / (n - 1) as f64).sqrt() } else { 0.0 };
    Moments { mean, std, se: std / (n as f64).sqrt() }
}

/// How Monte Carlo samples are simulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McMethod {
    /// One free-flight simulation; each sample locates its crossing on it.
    SharedPath,
    /// A full hybrid simulation per sample.
    PerSample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McOptions {
    pub n: usize,
    pub seed: u64,
    pub method: McMethod,
    pub ode: OdeOptions,
    pub initial: Option<State>,
}

impl McOptions {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, method: McMethod::SharedPath, ode: OdeOptions::default(), initial: None }
    }
}

/// Empirical contact statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n_samples: usize,
    pub seed: u64,
    pub method: McMethod,
    pub contacts: usize,
    /// Fraction of samples with contact within the horizon.
    pub contact_probability: f64,
    pub velocity: Moments,
    pub contact_time: Moments,
    /// Hard-saturated bounce acceleration.
    pub acceleration: Moments,
    /// `∫ u i dt` over the horizon (mJ).
    pub energy_mj: f64,
}

/// Draws the `i`-th contact position of a seeded stream.
pub fn sample_contact_position(cm: &ContactModel, seed: u64, i: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    cm.density.sample(&mut rng)
}

/// First time the trajectory passes `z_c`, with the state there.
pub fn first_crossing(traj: &Trajectory, z_c: f64) -> Option<(f64, State)> {
    let s0 = traj.states[0].z - z_c;
    if s0 == 0.0 {
        return Some((traj.t[0], traj.states[0]));
    }
    for k in 0..traj.len() - 1 {
        let b = traj.states[k + 1].z - z_c;
        let a = traj.states[k].z - z_c;
        if a == 0.0 {
            return Some((traj.t[k], traj.states[k]));
        }
        if (a > 0.0) != (b > 0.0) || b == 0.0 {
            let t = ode::find_root(|t| traj.state_at(t).z - z_c, traj.t[k], traj.t[k + 1], 1e-15);
            return Some((t, traj.state_at(t)));
        }
    }
    None
}

/// Samples contact positions, simulates, and aggregates the contacts that
/// happen within the model's horizon.
pub fn monte_carlo(
    p: &ActuatorParams,
    drive: &DriveSignal,
    cm: &ContactModel,
    bounce: &BounceConfig,
    opts: &McOptions,
) -> Result<McReport> {
    if opts.n == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one sample"));
    }
    let horizon = cm.t_f;
    // Free flight without a lower stop; also gives the energy.
    let mut free = SimOptions::new(f64::NEG_INFINITY, horizon);
    free.ode = opts.ode;
    free.initial = opts.initial;
    let flight = integrate(p, drive, &free)?;
    let path = flight.to_trajectory()?;
    let outcome = |i: usize| -> Result<Option<(f64, f64, f64)>> {
        let z_c = sample_contact_position(cm, opts.seed, i as u64);
        let hit = match opts.method {
            McMethod::SharedPath => first_crossing(&path, z_c),
            McMethod::PerSample => {
                let mut so = SimOptions::new(z_c, horizon);
                so.ode = opts.ode;
                so.initial = opts.initial;
                let r = integrate(p, drive, &so)?;
                r.contact().ok().map(|c| (c.t, c.state))
            }
        };
        Ok(hit.filter(|(t, _)| *t <= horizon).map(|(t, s)| {
            let a = contact::hard_saturation(bounce.bounce_acceleration(&s, p, cm.sign), cm.sign);
            (s.v, t, a)
        }))
    };
    let results: Vec<Result<Option<(f64, f64, f64)>>> = (0..opts.n).into_par_iter().map(outcome).collect();
    let mut v = Vec::new();
    let mut tc = Vec::new();
    let mut acc = Vec::new();
    for r in results {
        if let Some((vi, ti, ai)) = r? {
            v.push(vi);
            tc.push(ti);
            acc.push(ai);
        }
    }
    if v.is_empty() {
        return Err(Error::AllSamplesMissedContact(opts.n));
    }
    Ok(McReport {
        n_samples: opts.n,
        seed: opts.seed,
        method: opts.method,
        contacts: v.len(),
        contact_probability: v.len() as f64 / opts.n as f64,
        velocity: moments(&v),
        contact_time: moments(&tc),
        acceleration: moments(&acc),
        energy_mj: flight.energy_mj(),
    })
}

/// `∫ u i dt` of a trajectory in millijoules.
pub fn energy(traj: &Trajectory) -> f64 {
    traj.energy_mj()
}

/// One row of the `sigma_z` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub eos_velocity: f64,
    pub eos_acceleration: f64,
    pub pos_velocity: Option<f64>,
    pub pos_acceleration: Option<f64>,
    pub pos_nodes: usize,
    pub error: Option<String>,
}

/// `count` logarithmically spaced values from `lo` to `hi`.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()).collect();
    out[0] = lo;
    out[count - 1] = hi;
    out
}

fn with_sigma(spec: &OcpSpec, sigma: f64) -> OcpSpec {
    let mut s = spec.clone();
    s.contact = spec.contact.with_sigma(sigma);
    s
}

/// Largest sigma ratio of one warm-started step.
const MAX_SIGMA_RATIO: f64 = 1.5;

/// Solves at `to` starting from a solution at `from`, moving in log-sigma
/// steps that shrink after a failure and grow back after a success.
fn walk(spec: &OcpSpec, start: &Trajectory, from: f64, to: f64) -> Result<Trajectory> {
    const MAX_FAILURES: usize = 8; // in a row
    if from == to {
        return Ok(start.clone());
    }
    let mut current = start.clone();
    let mut at = from;
    // Longer jumps can land on a different, worse local solution.
    let max_step = MAX_SIGMA_RATIO.ln();
    let mut step = (to / from).ln().clamp(-max_step, max_step);
    let mut failures = 0;
    loop {
        let remaining = (to / at).ln();
        let next = if remaining.abs() <= step.abs() { to } else { at * step.exp() };
        let staged = with_sigma(spec, next);
        let solved = ocp::solve(&staged, Some(&current)).and_then(|t| {
            if improves_on(&staged, &t, &current) {
                Ok(t)
            } else {
                Err(Error::NoConvergence {
                    stage: None,
                    reason: format!("solution at sigma = {next:e} costs more than its warm start"),
                    residual: t.diagnostics.max_residual,
                    last: None,
                })
            }
        });
        match solved {
            Ok(t) if next == to => return Ok(t),
            Ok(t) => {
                current = t;
                at = next;
                failures = 0;
                step = (step * 1.5).clamp(-max_step, max_step);
            }
            Err(e) => {
                failures += 1;
                if failures > MAX_FAILURES {
                    return Err(e);
                }
                step *= 0.5;
            }
        }
    }
}

/// The previous solution stays feasible when only sigma changes, so a
/// solution that costs more than it (beyond discretization noise) is a
/// poorer stationary point.
fn improves_on(spec: &OcpSpec, solution: &Trajectory, warm: &Trajectory) -> bool {
    match (total_cost(solution, spec), total_cost(warm, spec)) {
        (Ok(new), Ok(old)) => new.total <= old.total * (1.0 + 1e-3),
        _ => false,
    }
}

fn evaluate_at(spec: &OcpSpec, traj: &Trajectory, sigma: f64) -> Result<(f64, f64)> {
    let e = ocp::evaluate(&with_sigma(spec, sigma), traj)?;
    Ok((e.expected_velocity, e.expected_acceleration))
}

/// Solves both problems across `sigmas` and evaluates the contact statistics.
///
/// The energy-optimal trajectory does not depend on `sigma_z` and is solved
/// once. The probability-based problem is solved at the template's spread by
/// continuation and then warm-started outward in both directions.
pub fn sigma_sweep(template: &OcpSpec, sigmas: &[f64]) -> Result<Vec<SweepRow>> {
    if sigmas.is_empty() || sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("sigma list must be non-empty and positive"));
    }
    if sigmas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("sigma list must be sorted ascending"));
    }
    let mut eos_spec = template.clone();
    eos_spec.mode = Mode::Eos;
    let mut pos_spec = template.clone();
    pos_spec.mode = Mode::Pos;
    let sigma_ref = template.contact.sigma().ok_or_else(|| Error::invalid("sweep needs a Gaussian contact model"))?;
    let (eos, pos_ref) = rayon::join(|| ocp::continuation_solve(&eos_spec), || ocp::continuation_solve(&pos_spec));
    let (eos, pos_ref) = (eos?, pos_ref?);

    let run = |order: Vec<usize>| -> Vec<(usize, std::result::Result<Trajectory, String>)> {
        let mut out = Vec::new();
        let mut current = pos_ref.clone();
        let mut at = sigma_ref;
        for k in order {
            let target = sigmas[k];
            // No cold restart on failure: at small spreads it converges to
            // poorer stationary points than the warm-started branch.
            match walk(&pos_spec, &current, at, target) {
                Ok(tr) => {
                    current = tr.clone();
                    at = target;
                    out.push((k, Ok(tr)));
                }
                Err(e) => out.push((k, Err(e.to_string()))),
            }
        }
        out
    };
    let down: Vec<usize> = (0..sigmas.len()).filter(|&k| sigmas[k] <= sigma_ref).rev().collect();
    let up: Vec<usize> = (0..sigmas.len()).filter(|&k| sigmas[k] > sigma_ref).collect();
    let (a, b) = rayon::join(|| run(down), || run(up));
    let mut solved: Vec<(usize, std::result::Result<Trajectory, String>)> = a.into_iter().chain(b).collect();
    solved.sort_by_key(|(k, _)| *k);

    let mut rows = Vec::with_capacity(sigmas.len());
    for (k, pos) in solved {
        let sigma = sigmas[k];
        let (eos_velocity, eos_acceleration) = evaluate_at(&eos_spec, &eos, sigma)?;
        let mut row = SweepRow {
            sigma,
            eos_velocity,
            eos_acceleration,
            pos_velocity: None,
            pos_acceleration: None,
            pos_nodes: 0,
            error: None,
        };
        match pos.and_then(|tr| evaluate_at(&pos_spec, &tr, sigma).map(|e| (e, tr.len())).map_err(|e| e.to_string())) {
            Ok(((v, a), nodes)) => {
                row.pos_velocity = Some(v);
                row.pos_acceleration = Some(a);
                row.pos_nodes = nodes;
            }
            Err(e) => row.error = Some(e),
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valve() -> ActuatorParams {
        ActuatorParams::reference_valve()
    }

    #[test]
    fn spring_opens_the_valve_and_it_stays_open() {
        let p = valve();
        let mut o = SimOptions::new(p.z_min, 0.05);
        o.initial = Some(State::new(p.z_min, 0.0, 0.0));
        let r = integrate(&p, &DriveSignal::constant(DriveKind::Voltage, 0.0), &o).unwrap();
        let end = *r.states.last().unwrap();
        assert!((end.z - p.z_max).abs() < 1e-12);
        assert_eq!(end.v, 0.0);
        assert!(r.states.iter().all(|s| s.z <= p.z_max + 1e-12 && s.z >= p.z_min - 1e-12));
    }

    #[test]
    fn weak_drive_does_not_move() {
        let p = valve();
        let r = integrate(&p, &DriveSignal::constant(DriveKind::Voltage, 25.0), &SimOptions::new(p.z_min, 0.03)).unwrap();
        assert!(r.states.iter().all(|s| s.z == p.z_max));
        assert!(matches!(r.contact(), Err(Error::EventNotBracketed { .. })));
    }

    #[test]
    fn strong_drive_closes_and_sticks() {
        let p = valve();
        let r = integrate(&p, &DriveSignal::constant(DriveKind::Voltage, 50.0), &SimOptions::new(p.z_min, 0.01)).unwrap();
        let c = r.contact().unwrap();
        assert!(c.velocity < 0.0);
        assert_eq!(r.bounces(), 0);
        let after = r.t.iter().position(|&t| t > c.t).unwrap();
        assert!(r.states[after..].iter().all(|s| s.z == p.z_min && s.v == 0.0));
    }

    #[test]
    fn elastic_contact_reflects() {
        let p = valve();
        let mut o = SimOptions::new(p.z_min, 0.01);
        o.restitution = 1.0;
        let r = integrate(&p, &DriveSignal::constant(DriveKind::Voltage, 50.0), &o).unwrap();
        let c = r.contact().unwrap();
        let k = (0..r.t.len()).find(|&k| r.t[k] >= c.t && r.states[k].v > 0.0).unwrap();
        assert!((r.states[k].v + c.velocity).abs() < 1e-9 * c.velocity.abs());
    }

    #[test]
    fn current_drive_requires_eddy_constant() {
        let mut p = valve();
        p.eddy = 0.0;
        let err = integrate(&p, &DriveSignal::constant(DriveKind::Current, 0.5), &SimOptions::new(p.z_min, 0.01));
        assert!(err.is_err());
    }

    #[test]
    fn energy_of_constant_power() {
        let r = SimResult {
            t: vec![0.0, 1e-3, 2e-3],
            voltage: vec![10.0; 3],
            current: vec![0.5; 3],
            ..Default::default()
        };
        assert!((r.energy_mj() - 10.0).abs() < 1e-12);
        let zero = SimResult { voltage: vec![0.0; 3], ..r };
        assert_eq!(zero.energy_mj(), 0.0);
    }

    #[test]
    fn drive_interpolation_and_ramps() {
        let d = DriveSignal::new(DriveKind::Voltage, vec![0.0, 1.0, 2.0], vec![0.0, 10.0, 10.0]).unwrap();
        assert_eq!(d.value(0.5), 5.0);
        assert_eq!(d.value(3.0), 10.0);
        let r = DriveSignal::new(DriveKind::Current, vec![0.0, 1.0], vec![0.8, 0.8]).unwrap().with_ramps(0.25, 0.25);
        assert!((r.value(0.125) - 0.4).abs() < 1e-12);
        assert!((r.value(0.5) - 0.8).abs() < 1e-12);
        assert!(DriveSignal::new(DriveKind::Voltage, vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn log_spacing() {
        let s = log_space(1e-8, 1e-4, 5);
        assert_eq!(s.len(), 5);
        assert!((s[2] - 1e-6).abs() < 1e-18);
    }
}
