//! Contact velocity and acceleration of both planners as the spread of the
//! contact position varies.

use softland::ocp::{Mode, OcpSpec};
use softland::sim;

fn main() -> softland::error::Result<()> {
    let spec = OcpSpec::reference(Mode::Pos);
    let sigmas = sim::log_space(1e-8, 1e-4, 12);
    println!("{:>10} {:>10} {:>10} {:>10} {:>10} {:>6}", "sigma", "eos_v", "pos_v", "eos_a", "pos_a", "nodes");
    for row in sim::sigma_sweep(&spec, &sigmas)? {
        let fmt = |x: Option<f64>| x.map(|v| format!("{v:10.4}")).unwrap_or_else(|| format!("{:>10}", "failed"));
        println!(
            "{:10.2e} {:10.4} {} {:10.2} {} {:6}",
            row.sigma,
            row.eos_velocity,
            fmt(row.pos_velocity),
            row.eos_acceleration,
            fmt(row.pos_acceleration),
            row.pos_nodes
        );
        if let Some(e) = row.error {
            println!("    {e}");
        }
    }
    Ok(())
}
