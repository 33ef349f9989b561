//! Time-meshed solutions with a piecewise-cubic interpolant.

use serde::{Deserialize, Serialize};

use crate::actuator::State;
use crate::error::{Error, Result};
use crate::ocp::Costate;

/// Solver bookkeeping attached to a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest scaled RMS collocation residual over the mesh intervals.
    pub max_residual: f64,
    /// Largest absolute boundary-condition residual.
    pub bc_residual: f64,
    pub newton_iterations: usize,
    /// Node count after each refinement round.
    pub mesh_history: Vec<usize>,
    /// Continuation stages that were run to produce this trajectory.
    pub stages: usize,
}

/// States, costates and control on a time mesh.
///
/// Between nodes the states and costates follow the cubic Hermite
/// interpolant built from node values and node derivatives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<State>,
    pub state_rates: Vec<[f64; 3]>,
    pub costates: Vec<Costate>,
    pub costate_rates: Vec<[f64; 3]>,
    /// Coil voltage (V).
    pub control: Vec<f64>,
    /// Coil current (A).
    pub current: Vec<f64>,
    pub diagnostics: Diagnostics,
}

fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, s: f64) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let slope = ((6.0 * s2 - 6.0 * s) * (y0 - y1)) / h + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (3.0 * s2 - 2.0 * s) * d1;
    (value, slope)
}

impl Trajectory {
    /// A state-only trajectory; costates, control and current are zero.
    pub fn from_states(t: Vec<f64>, states: Vec<State>, state_rates: Vec<[f64; 3]>) -> Result<Self> {
        let n = t.len();
        if n < 2 || states.len() != n || state_rates.len() != n {
            return Err(Error::invalid("trajectory needs at least two nodes and matching channel lengths"));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("trajectory mesh must be strictly increasing"));
        }
        Ok(Self {
            t,
            states,
            state_rates,
            costates: vec![Costate::default(); n],
            costate_rates: vec![[0.0; 3]; n],
            control: vec![0.0; n],
            current: vec![0.0; n],
            diagnostics: Diagnostics::default(),
        })
    }

    /// Samples an analytic path `t -> (state, rate)` on a uniform mesh.
    pub fn sample<F: FnMut(f64) -> (State, [f64; 3])>(t0: f64, t1: f64, nodes: usize, mut path: F) -> Result<Self> {
        let nodes = nodes.max(2);
        let t: Vec<f64> = (0..nodes).map(|k| t0 + (t1 - t0) * k as f64 / (nodes - 1) as f64).collect();
        let (states, rates) = t.iter().map(|&ti| path(ti)).unzip();
        Self::from_states(t, states, rates)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t[0], self.t[self.t.len() - 1])
    }

    pub fn final_state(&self) -> State {
        self.states[self.states.len() - 1]
    }

    /// Index of the interval containing `t` and the local coordinate in it.
    fn locate(&self, t: f64) -> (usize, f64, f64) {
        let n = self.t.len();
        let k = match self.t.partition_point(|&x| x <= t) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.t[k + 1] - self.t[k];
        (k, h, ((t - self.t[k]) / h).clamp(0.0, 1.0))
    }

    /// Interpolated state and its time derivative.
    pub fn state_and_rate_at(&self, t: f64) -> (State, [f64; 3]) {
        let (k, h, s) = self.locate(t);
        let a = self.states[k].to_array();
        let b = self.states[k + 1].to_array();
        let mut x = [0.0; 3];
        let mut dx = [0.0; 3];
        for i in 0..3 {
            let (v, d) = hermite(a[i], b[i], self.state_rates[k][i], self.state_rates[k + 1][i], h, s);
            x[i] = v;
            dx[i] = d;
        }
        (State::from_slice(&x), dx)
    }

    pub fn state_at(&self, t: f64) -> State {
        self.state_and_rate_at(t).0
    }

    pub fn costate_at(&self, t: f64) -> Costate {
        let (k, h, s) = self.locate(t);
        let a = self.costates[k].to_array();
        let b = self.costates[k + 1].to_array();
        let mut l = [0.0; 3];
        for i in 0..3 {
            l[i] = hermite(a[i], b[i], self.costate_rates[k][i], self.costate_rates[k + 1][i], h, s).0;
        }
        Costate::from_array(l)
    }

    /// Piecewise-linear interpolation of the stored control.
    pub fn control_at(&self, t: f64) -> f64 {
        let (k, _, s) = self.locate(t);
        self.control[k] + s * (self.control[k + 1] - self.control[k])
    }

    pub fn current_at(&self, t: f64) -> f64 {
        let (k, _, s) = self.locate(t);
        self.current[k] + s * (self.current[k + 1] - self.current[k])
    }

    /// Trapezoidal `∫ u i dt` in millijoules.
    pub fn energy_mj(&self) -> f64 {
        let p: Vec<f64> = self.control.iter().zip(&self.current).map(|(u, i)| u * i).collect();
        trapezoid(&self.t, &p) * 1e3
    }

    /// Splits every interval into `factor` pieces, interpolating all channels.
    pub fn refined(&self, factor: usize) -> Trajectory {
        let factor = factor.max(1);
        let mut out = Trajectory { diagnostics: self.diagnostics.clone(), ..Default::default() };
        for k in 0..self.len() - 1 {
            for j in 0..factor {
                let t = self.t[k] + (self.t[k + 1] - self.t[k]) * j as f64 / factor as f64;
                out.push_interpolated(self, t, k, j == 0);
            }
        }
        out.push_interpolated(self, self.t[self.len() - 1], self.len() - 1, true);
        out
    }

    fn push_interpolated(&mut self, src: &Trajectory, t: f64, k: usize, at_node: bool) {
        if at_node {
            self.t.push(src.t[k]);
            self.states.push(src.states[k]);
            self.state_rates.push(src.state_rates[k]);
            self.costates.push(src.costates[k]);
            self.costate_rates.push(src.costate_rates[k]);
            self.control.push(src.control[k]);
            self.current.push(src.current[k]);
            return;
        }
        let (x, dx) = src.state_and_rate_at(t);
        let (kk, h, s) = src.locate(t);
        let a = src.costates[kk].to_array();
        let b = src.costates[kk + 1].to_array();
        let mut l = [0.0; 3];
        let mut dl = [0.0; 3];
        for i in 0..3 {
            let (v, d) = hermite(a[i], b[i], src.costate_rates[kk][i], src.costate_rates[kk + 1][i], h, s);
            l[i] = v;
            dl[i] = d;
        }
        self.t.push(t);
        self.states.push(x);
        self.state_rates.push(dx);
        self.costates.push(Costate::from_array(l));
        self.costate_rates.push(dl);
        self.control.push(src.control_at(t));
        self.current.push(src.current_at(t));
    }
}

/// Trapezoidal rule over a sampled function.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2).zip(y.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum()
}
