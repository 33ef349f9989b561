//! File formats: trajectory CSV, JSON reports, sweep tables, pulse datasets.
//!
//! Every writer goes through [`atomic_write`], so a failed run never leaves
//! a truncated file behind.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actuator::State;
use crate::config::ActuatorConfig;
use crate::contact::{contact_time_pdf, saturated_bounce_acceleration, Saturation};
use crate::cost::{self, CostBreakdown};
use crate::error::{Error, Result};
use crate::identification::{FitReport, Pulse, PulseDataset};
use crate::ocp::{Costate, Evaluation, Mode, OcpSpec};
use crate::sim::{McReport, SweepRow};
use crate::trajectory::{Diagnostics, Trajectory};

pub const TRAJECTORY_HEADER: [&str; 13] = ["t", "z", "v", "alpha", "lambda1", "lambda2", "lambda3", "u", "i", "f_Tc", "V1", "V2", "V3"];
pub const DATASET_HEADER: [&str; 4] = ["pulse", "t", "u", "i"];
pub const SWEEP_HEADER: [&str; 7] = ["sigma", "eos_velocity", "pos_velocity", "eos_acceleration", "pos_acceleration", "pos_nodes", "status"];

/// Writes to a temporary sibling and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w)?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Trajectory with contact density and cost integrands per node.
pub fn write_trajectory_csv(path: &Path, spec: &OcpSpec, traj: &Trajectory) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(TRAJECTORY_HEADER)?;
        for k in 0..traj.len() {
            let s = traj.states[k];
            let l = traj.costates[k];
            let u = traj.control[k];
            let v3 = cost::v3(&s, u, &spec.params, &spec.weights).unwrap_or(f64::NAN);
            let row = [
                traj.t[k],
                s.z,
                s.v,
                s.alpha,
                l.l1,
                l.l2,
                l.l3,
                u,
                traj.current[k],
                contact_time_pdf(&s, &spec.contact),
                cost::v1(&s, &spec.contact, &spec.weights),
                cost::v2(&s, &spec.contact, &spec.params, &spec.bounce, &spec.weights),
                v3,
            ];
            w.write_record(row.iter().map(|x| num(*x)))?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

fn parse_field(path: &Path, line: usize, name: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Schema(format!("{}:{line}: column {name}: '{s}' is not a number", path.display())))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Schema(format!(
            "{}: header is '{}', expected '{}'",
            path.display(),
            header.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`]; node derivatives
/// are rebuilt from `spec`.
pub fn read_trajectory_csv(path: &Path, spec: &OcpSpec) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(path, &mut rdr, &TRAJECTORY_HEADER)?;
    let (mut t, mut states, mut costates, mut control, mut current) = (vec![], vec![], vec![], vec![], vec![]);
    for (j, row) in rdr.records().enumerate() {
        let row = row?;
        let line = j + 2;
        if row.len() != TRAJECTORY_HEADER.len() {
            return Err(Error::Schema(format!("{}:{line}: expected {} columns", path.display(), TRAJECTORY_HEADER.len())));
        }
        let mut x = [0.0; 9];
        for (i, v) in x.iter_mut().enumerate() {
            *v = parse_field(path, line, TRAJECTORY_HEADER[i], &row[i])?;
        }
        t.push(x[0]);
        states.push(State::new(x[1], x[2], x[3]));
        costates.push(Costate::new(x[4], x[5], x[6]));
        control.push(x[7]);
        current.push(x[8]);
    }
    let rates = states.iter().zip(&control).map(|(s, &u)| spec.params.dynamics(s, u).to_array()).collect();
    let mut traj = Trajectory::from_states(t, states, rates).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    traj.costate_rates = traj
        .states
        .iter()
        .zip(&costates)
        .map(|(s, l)| spec.costate_rhs(s, l).map(|r| r.to_array()))
        .collect::<Result<Vec<_>>>()?;
    traj.costates = costates;
    traj.control = control;
    traj.current = current;
    Ok(traj)
}

/// Sidecar metadata path of a trajectory CSV.
pub fn metadata_path(trajectory: &Path) -> std::path::PathBuf {
    trajectory.with_extension("json")
}

/// Run summary written next to a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mode: Mode,
    pub nodes: usize,
    pub evaluation: Evaluation,
    pub cost: CostBreakdown,
    pub terminal_velocity: f64,
    pub terminal_position_error: f64,
    pub diagnostics: Diagnostics,
}

/// State-plane panels against `z`: velocity, hard-saturated bounce
/// acceleration and the contact-position density.
pub fn write_state_plane_csv(path: &Path, spec: &OcpSpec, traj: &Trajectory) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(["z", "v", "a_b_sat", "f_Zc"])?;
        for s in &traj.states {
            let a = saturated_bounce_acceleration(s, &spec.params, &spec.contact, &spec.bounce, Saturation::Hard);
            w.write_record([num(s.z), num(s.v), num(a), num(spec.contact.pdf(s.z))])?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// One-row table of a Monte Carlo report.
pub fn write_mc_csv(path: &Path, r: &McReport) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record([
            "n_samples",
            "seed",
            "contacts",
            "contact_probability",
            "velocity_mean",
            "velocity_std",
            "velocity_se",
            "acceleration_mean",
            "acceleration_std",
            "acceleration_se",
            "contact_time_mean",
            "contact_time_std",
            "energy_mj",
        ])?;
        let row = [
            r.n_samples.to_string(),
            r.seed.to_string(),
            r.contacts.to_string(),
            num(r.contact_probability),
            num(r.velocity.mean),
            num(r.velocity.std),
            num(r.velocity.se),
            num(r.acceleration.mean),
            num(r.acceleration.std),
            num(r.acceleration.se),
            num(r.contact_time.mean),
            num(r.contact_time.std),
            num(r.energy_mj),
        ];
        w.write_record(row)?;
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    let bytes = csv_bytes(|w| {
        w.write_record(SWEEP_HEADER)?;
        for r in rows {
            w.write_record([
                num(r.sigma),
                num(r.eos_velocity),
                opt(r.pos_velocity),
                num(r.eos_acceleration),
                opt(r.pos_acceleration),
                r.pos_nodes.to_string(),
                r.error.clone().unwrap_or_else(|| "ok".into()),
            ])?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// Long format: one row per sample, `t` restarting at zero for every pulse.
pub fn write_dataset_csv(path: &Path, data: &PulseDataset) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(DATASET_HEADER)?;
        for (j, p) in data.pulses.iter().enumerate() {
            for k in 0..p.len() {
                w.write_record([j.to_string(), num(k as f64 / data.sample_rate), num(p.voltage[k]), num(p.current[k])])?;
            }
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)
}

/// Reads a dataset written by [`write_dataset_csv`]. Pulses must be
/// contiguous, numbered from zero and share one uniform sample rate.
pub fn read_dataset_csv(path: &Path) -> Result<PulseDataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(path, &mut rdr, &DATASET_HEADER)?;
    let schema = |line: usize, msg: &str| Error::Schema(format!("{}:{line}: {msg}", path.display()));
    let mut pulses: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for (j, row) in rdr.records().enumerate() {
        let row = row?;
        let line = j + 2;
        if row.len() != 4 {
            return Err(schema(line, "expected 4 columns"));
        }
        let id: usize = row[0].trim().parse().map_err(|_| schema(line, "pulse index is not an integer"))?;
        if id == pulses.len() {
            pulses.push((vec![], vec![], vec![]));
        } else if id + 1 != pulses.len() {
            return Err(schema(line, "pulses must be contiguous and numbered from 0"));
        }
        let p = pulses.last_mut().expect("pushed above");
        p.0.push(parse_field(path, line, "t", &row[1])?);
        p.1.push(parse_field(path, line, "u", &row[2])?);
        p.2.push(parse_field(path, line, "i", &row[3])?);
    }
    let first = pulses.first().ok_or_else(|| Error::Schema(format!("{}: no samples", path.display())))?;
    if first.0.len() < 3 {
        return Err(Error::Schema(format!("{}: pulse 0 has fewer than 3 samples", path.display())));
    }
    let dt = first.0[1] - first.0[0];
    if !(dt > 0.0) {
        return Err(Error::Schema(format!("{}: time must increase", path.display())));
    }
    let mut out = Vec::with_capacity(pulses.len());
    for (j, (t, u, i)) in pulses.into_iter().enumerate() {
        let uniform = t.iter().enumerate().all(|(k, &tk)| (tk - t[0] - k as f64 * dt).abs() <= 1e-6 * dt + 1e-9 * tk.abs());
        if !uniform || t[0].abs() > 1e-6 * dt {
            return Err(Error::Schema(format!("{}: pulse {j} is not sampled uniformly from t = 0 at {dt:e} s", path.display())));
        }
        out.push(Pulse::new(u, i)?);
    }
    Ok(PulseDataset { sample_rate: 1.0 / dt, pulses: out })
}

/// Fit summary with the fitted actuator in config form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub params: ActuatorConfig,
    pub resistance: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
    pub contact_errors: Vec<Option<f64>>,
    pub current_residuals: Vec<f64>,
    pub trace: Vec<f64>,
}

impl From<&FitReport> for FitSummary {
    fn from(r: &FitReport) -> Self {
        Self {
            params: ActuatorConfig::from_params(&r.params),
            resistance: r.resistance,
            initial_cost: r.initial_cost,
            final_cost: r.final_cost,
            evaluations: r.evaluations,
            iterations: r.iterations,
            converged: r.converged,
            contact_errors: r.contact_errors.clone(),
            current_residuals: r.current_residuals.clone(),
            trace: r.trace.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let pulse = |a: f64| Pulse::new(vec![a, a, a, 0.0, 0.0], vec![0.0, 0.1 * a, 0.2 * a, 0.1, 0.0]).unwrap();
        let data = PulseDataset { sample_rate: 1e6, pulses: vec![pulse(30.0), pulse(40.0)] };
        write_dataset_csv(&path, &data).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back.pulses, data.pulses);
        assert!((back.sample_rate - 1e6).abs() < 1e-3);
    }

    #[test]
    fn bad_header_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "pulse,time,u,i\n0,0,1,0\n").unwrap();
        assert!(matches!(read_dataset_csv(&path), Err(Error::Schema(_))));
        std::fs::write(&path, "pulse,t,u,i\n0,0,x,0\n").unwrap();
        let e = read_dataset_csv(&path).unwrap_err();
        assert!(e.to_string().contains(":2: column u"), "{e}");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let spec = OcpSpec::reference(Mode::Eos);
        let mut traj = spec.initial_guess();
        traj.control = traj.t.iter().map(|t| 1e3 * t).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&path, &spec, &traj).unwrap();
        let back = read_trajectory_csv(&path, &spec).unwrap();
        assert_eq!(back.t, traj.t);
        assert_eq!(back.states, traj.states);
        assert_eq!(back.control, traj.control);
    }
}
