//! Recovers the mechanical and magnetic parameters from simulated pulse
//! measurements, starting from a guess that is off by 10 to 30 %.

use softland::actuator::{ActuatorParams, Reluctance};
use softland::error::Error;
use softland::identification::{self, FitOptions, Identification, IdentificationOptions, PulseProtocol};

fn main() -> softland::error::Result<()> {
    let truth = ActuatorParams::reference_valve();
    let data = identification::synthetic_dataset(&truth, &PulseProtocol::default())?;
    let problem = Identification::new(data, truth.coil_turns, IdentificationOptions::default())?;
    println!("resistance estimate {:.4} ohm (true {:.4})", problem.resistance, truth.resistance);

    let mut start = truth.clone();
    start.mass *= 1.2;
    start.spring_stiffness *= 0.8;
    start.friction *= 1.3;
    start.eddy *= 0.9;
    if let Reluctance::SaturableCore { k1, k2, .. } = &mut start.reluctance {
        *k1 *= 1.1;
        *k2 *= 0.9;
    }
    let opts = FitOptions { max_evaluations: 2000, seed: 3, ..Default::default() };
    let report = match identification::fit(&problem, &start, &opts) {
        Ok(r) => r,
        Err(Error::BudgetExhausted(r)) => *r,
        Err(e) => return Err(e),
    };
    println!("cost {:.3e} -> {:.3e} in {} evaluations", report.initial_cost, report.final_cost, report.evaluations);
    let pct = |fit: f64, true_value: f64| 100.0 * (fit / true_value - 1.0);
    println!("mass      {:+.2} %", pct(report.params.mass, truth.mass));
    let preload = |p: &ActuatorParams| p.spring_stiffness * (p.spring_rest - p.z_max);
    println!("preload   {:+.2} %", pct(preload(&report.params), preload(&truth)));
    println!("stiffness {:+.2} %", pct(report.params.spring_stiffness, truth.spring_stiffness));
    println!("friction  {:+.2} %", pct(report.params.friction, truth.friction));
    println!("eddy      {:+.2} %", pct(report.params.eddy, truth.eddy));
    Ok(())
}
