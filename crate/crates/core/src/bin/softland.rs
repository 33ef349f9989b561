//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or argument error, 3 solver or
//! simulation failure, 4 file error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use softland::config;
use softland::cost::total_cost;
use softland::error::{Error, Result};
use softland::identification::{self, FitOptions, Identification, IdentificationOptions, PulseProtocol};
use softland::io;
use softland::ocp::{self, Mode, OcpSpec};
use softland::sim::{self, DriveKind, DriveSignal, McMethod, McOptions};
use softland::trajectory::Trajectory;

#[derive(Parser, Debug)]
#[command(name = "softland", version, about = "Soft-landing trajectory design for reluctance actuators")]
struct Cli {
    /// Actuator config (TOML). Defaults to the bundled valve.
    #[arg(long, global = true)]
    actuator: Option<PathBuf>,
    /// Optimization config (TOML). Defaults to the bundled soft-landing problem.
    #[arg(long, global = true)]
    optimization: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Pos,
    Eos,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pos => Mode::Pos,
            ModeArg::Eos => Mode::Eos,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    SharedPath,
    PerSample,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DriveArg {
    Voltage,
    Current,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the optimal control problem and write trajectory_<mode>.csv/.json.
    Solve {
        /// Overrides the mode of the optimization config.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Compare a POS and an EOS trajectory: table plus state-plane CSVs.
    Compare {
        /// Probability-based trajectory CSV.
        #[arg(long)]
        pos: PathBuf,
        /// Energy-optimal trajectory CSV.
        #[arg(long)]
        eos: PathBuf,
    },
    /// Empirical contact statistics of a trajectory replayed in the simulator.
    Montecarlo(MonteCarloArgs),
    /// Contact statistics of both methods across contact-position spreads.
    Sweep {
        /// Range of sigma_z in metres, `lo..hi`.
        #[arg(long, default_value = "1e-8..1e-4", value_parser = parse_range)]
        sigmas: (f64, f64),
        /// Log-spaced grid points.
        #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u32).range(1..))]
        points: u32,
    },
    /// Fit the actuator parameters to a pulse dataset.
    Identify(IdentifyArgs),
    /// Simulate the pulse protocol and write dataset.csv.
    Dataset {
        /// Pulse amplitudes in volts, `lo..hi` in 1 V steps.
        #[arg(long, default_value = "25..50", value_parser = parse_range)]
        amplitudes: (f64, f64),
        /// Positive-voltage duration (s).
        #[arg(long, default_value_t = 15e-3)]
        on: f64,
        /// Zero-voltage duration (s).
        #[arg(long, default_value_t = 15e-3)]
        off: f64,
        /// Sample rate (Hz).
        #[arg(long, default_value_t = 1e6)]
        rate: f64,
    },
}

#[derive(Args, Debug)]
struct MonteCarloArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Trajectory CSV from `solve`; solved on the fly if omitted.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Problem the trajectory solves; read from its metadata when omitted.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// One shared free flight, or a full simulation per sample.
    #[arg(long, value_enum, default_value = "shared-path")]
    method: MethodArg,
    /// Replay the voltage or the current of the trajectory.
    #[arg(long, value_enum, default_value = "voltage")]
    drive: DriveArg,
    /// Points of the replayed drive signal.
    #[arg(long, default_value_t = 20_000)]
    drive_samples: usize,
    /// Integrator relative tolerance.
    #[arg(long, default_value_t = 1e-9)]
    rtol: f64,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    /// Dataset CSV with columns pulse,t,u,i.
    #[arg(long)]
    dataset: PathBuf,
    /// Evaluation budget.
    #[arg(long, default_value_t = 4000)]
    max_evals: usize,
    /// Initial simplex edge in log-parameter space.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Stop once the cost reaches this value (0 disables).
    #[arg(long, default_value_t = 0.0)]
    target_cost: f64,
    /// Flux drift bound at the pulse end, as a fraction of the peak.
    #[arg(long, default_value_t = 0.05)]
    drift_fraction: f64,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected lo..hi, got '{s}'"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if !(lo <= hi) {
        return Err(format!("empty range {s}"));
    }
    Ok((lo, hi))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::InvalidParameter(_)
        | Error::FluxOutOfRange { .. }
        | Error::InfeasibleBounds { .. }
        | Error::DegenerateRegularization(_)
        | Error::ZeroContactProbability(_) => 2,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Schema(_) => 4,
        _ => 3,
    }
}

fn spec_for(cli: &Cli, mode: Option<ModeArg>) -> Result<OcpSpec> {
    let mut spec = config::load(cli.actuator.as_deref(), cli.optimization.as_deref())?;
    if let Some(m) = mode {
        spec.mode = m.into();
    }
    Ok(spec)
}

fn recorded_mode(trajectory: &Path) -> Option<ModeArg> {
    match io::read_json::<io::SolveReport>(&io::metadata_path(trajectory)) {
        Ok(r) if r.mode == Mode::Pos => Some(ModeArg::Pos),
        Ok(_) => Some(ModeArg::Eos),
        Err(_) => None,
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Pos => "pos",
        Mode::Eos => "eos",
    }
}

fn solve_and_write(spec: &OcpSpec, out: &Path) -> Result<Trajectory> {
    let traj = ocp::continuation_solve(spec)?;
    let name = mode_name(spec.mode);
    io::write_trajectory_csv(&out.join(format!("trajectory_{name}.csv")), spec, &traj)?;
    let end = traj.final_state();
    let report = io::SolveReport {
        mode: spec.mode,
        nodes: traj.len(),
        evaluation: ocp::evaluate(spec, &traj)?,
        cost: total_cost(&traj, spec)?,
        terminal_velocity: end.v,
        terminal_position_error: end.z - spec.z_f,
        diagnostics: traj.diagnostics.clone(),
    };
    io::write_json(&io::metadata_path(&out.join(format!("trajectory_{name}.csv"))), &report)?;
    let e = &report.evaluation;
    println!(
        "{name}: {} nodes, E[Vc] = {:.6} m/s, E[Ac] = {:.4} m/s^2, energy = {:.3} mJ, v(t_f) = {:.3e} m/s",
        report.nodes, e.expected_velocity, e.expected_acceleration, e.energy_mj, end.v
    );
    Ok(traj)
}

fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Solve { mode } => {
            let spec = spec_for(cli, *mode)?;
            solve_and_write(&spec, out)?;
        }
        Command::Compare { pos, eos } => {
            // Same contact model for both; the mode only selects how the
            // control is rebuilt, taken from the sidecar metadata if present.
            let pos_spec = spec_for(cli, Some(recorded_mode(pos).unwrap_or(ModeArg::Pos)))?;
            let eos_spec = spec_for(cli, Some(recorded_mode(eos).unwrap_or(ModeArg::Eos)))?;
            let pt = io::read_trajectory_csv(pos, &pos_spec)?;
            let et = io::read_trajectory_csv(eos, &eos_spec)?;
            let pe = ocp::evaluate(&pos_spec, &pt)?;
            let ee = ocp::evaluate(&eos_spec, &et)?;
            let rows = [
                ("expected_velocity", pe.expected_velocity, ee.expected_velocity),
                ("expected_acceleration", pe.expected_acceleration, ee.expected_acceleration),
                ("energy_mj", pe.energy_mj, ee.energy_mj),
            ];
            let mut table = String::from("metric,pos,eos,difference\n");
            println!("{:<24}{:>16}{:>16}{:>16}", "metric", "POS", "EOS", "POS - EOS");
            for (name, a, b) in rows {
                println!("{name:<24}{a:>16.6}{b:>16.6}{:>16.6}", a - b);
                table.push_str(&format!("{name},{a:.16e},{b:.16e},{:.16e}\n", a - b));
            }
            io::atomic_write(&out.join("compare.csv"), table.as_bytes())?;
            io::write_state_plane_csv(&out.join("state_plane_pos.csv"), &pos_spec, &pt)?;
            io::write_state_plane_csv(&out.join("state_plane_eos.csv"), &eos_spec, &et)?;
        }
        Command::Montecarlo(a) => {
            let mode = a.mode.or_else(|| a.trajectory.as_deref().and_then(recorded_mode));
            let spec = spec_for(cli, mode)?;
            let traj = match &a.trajectory {
                Some(path) => io::read_trajectory_csv(path, &spec)?,
                None => ocp::continuation_solve(&spec)?,
            };
            let kind = match a.drive {
                DriveArg::Voltage => DriveKind::Voltage,
                DriveArg::Current => DriveKind::Current,
            };
            let drive = DriveSignal::from_solution(&spec, &traj, kind, a.drive_samples)?;
            let mut opts = McOptions::new(a.n as usize, cli.seed);
            opts.initial = Some(traj.states[0]);
            opts.method = match a.method {
                MethodArg::SharedPath => McMethod::SharedPath,
                MethodArg::PerSample => McMethod::PerSample,
            };
            opts.ode.rtol = a.rtol;
            let report = sim::monte_carlo(&spec.params, &drive, &spec.contact, &spec.bounce, &opts)?;
            io::write_json(&out.join("montecarlo.json"), &report)?;
            io::write_mc_csv(&out.join("montecarlo.csv"), &report)?;
            println!(
                "{} samples, P(contact) = {:.4}, E[Vc] = {:.6} ± {:.6} m/s, E[Ac] = {:.4} ± {:.4} m/s^2, energy = {:.3} mJ",
                report.n_samples,
                report.contact_probability,
                report.velocity.mean,
                report.velocity.se,
                report.acceleration.mean,
                report.acceleration.se,
                report.energy_mj
            );
        }
        Command::Sweep { sigmas, points } => {
            let spec = spec_for(cli, None)?;
            let grid = sim::log_space(sigmas.0, sigmas.1, *points as usize);
            let rows = sim::sigma_sweep(&spec, &grid)?;
            io::write_sweep_csv(&out.join("sweep.csv"), &rows)?;
            io::write_json(&out.join("sweep.json"), &rows)?;
            for r in &rows {
                match (r.pos_velocity, r.pos_acceleration) {
                    (Some(v), Some(acc)) => println!(
                        "sigma {:.3e}: EOS {:.5} m/s {:.3} m/s^2 | POS {v:.5} m/s {acc:.4} m/s^2",
                        r.sigma, r.eos_velocity, r.eos_acceleration
                    ),
                    _ => println!("sigma {:.3e}: POS failed: {}", r.sigma, r.error.as_deref().unwrap_or("unknown")),
                }
            }
        }
        Command::Identify(a) => {
            let start = spec_for(cli, None)?.params;
            let data = io::read_dataset_csv(&a.dataset)?;
            let options = IdentificationOptions { drift_fraction: a.drift_fraction, ..Default::default() };
            let problem = Identification::new(data, start.coil_turns, options)?;
            let fit_opts = FitOptions {
                max_evaluations: a.max_evals,
                initial_step: a.step,
                target_cost: a.target_cost,
                seed: cli.seed,
                ..Default::default()
            };
            let (report, outcome) = match identification::fit(&problem, &start, &fit_opts) {
                Ok(r) => (r, Ok(())),
                Err(Error::BudgetExhausted(r)) => {
                    let e = Error::BudgetExhausted(r.clone());
                    (*r, Err(e))
                }
                Err(e) => return Err(e),
            };
            io::write_json(&out.join("fit.json"), &io::FitSummary::from(&report))?;
            io::atomic_write(&out.join("fitted_actuator.toml"), config::actuator_toml(&report.params).as_bytes())?;
            println!(
                "R = {:.4} ohm, cost {:.3e} -> {:.3e} in {} evaluations",
                report.resistance, report.initial_cost, report.final_cost, report.evaluations
            );
            outcome?;
        }
        Command::Dataset { amplitudes, on, off, rate } => {
            let params = spec_for(cli, None)?.params;
            let count = (amplitudes.1 - amplitudes.0).floor() as usize + 1;
            let protocol = PulseProtocol {
                amplitudes: (0..count).map(|k| amplitudes.0 + k as f64).collect(),
                on: *on,
                off: *off,
                sample_rate: *rate,
            };
            let data = identification::synthetic_dataset(&params, &protocol)?;
            io::write_dataset_csv(&out.join("dataset.csv"), &data)?;
            println!("{} pulses at {:.0} Hz", data.pulses.len(), data.sample_rate);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
