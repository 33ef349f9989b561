//! Replays the planned voltage open loop against random contact positions
//! and compares the sample statistics with the planner's expectations.

use softland::ocp::{self, Mode, OcpSpec};
use softland::sim::{self, DriveKind, DriveSignal, McMethod, McOptions};

fn main() -> softland::error::Result<()> {
    let spec = OcpSpec::reference(Mode::Pos);
    let traj = ocp::continuation_solve(&spec)?;
    let planned = ocp::evaluate(&spec, &traj)?;
    let drive = DriveSignal::from_solution(&spec, &traj, DriveKind::Voltage, 20_000)?;
    for method in [McMethod::SharedPath, McMethod::PerSample] {
        let mut opts = McOptions::new(2000, 7);
        opts.method = method;
        opts.initial = Some(traj.states[0]);
        let mc = sim::monte_carlo(&spec.params, &drive, &spec.contact, &spec.bounce, &opts)?;
        println!(
            "{method:?}: P(contact) {:.3}, E[Vc] {:.4} +- {:.4} m/s (planned {:.4}), E[Ac] {:.2} +- {:.2} m/s^2 (planned {:.2}), energy {:.2} mJ",
            mc.contact_probability,
            mc.velocity.mean,
            mc.velocity.se,
            planned.expected_velocity,
            mc.acceleration.mean,
            mc.acceleration.se,
            planned.expected_acceleration,
            mc.energy_mj,
        );
    }
    Ok(())
}
