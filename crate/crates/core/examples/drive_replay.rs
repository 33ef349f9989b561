//! Plays the probability-based plan back as a coil current against one
//! contact position and compares the simulated landing with the plan.

use softland::ocp::{self, Mode, OcpSpec};
use softland::sim::{self, DriveKind, DriveSignal, SimOptions};

fn main() -> softland::error::Result<()> {
    let spec = OcpSpec::reference(Mode::Pos);
    let traj = ocp::continuation_solve(&spec)?;
    for kind in [DriveKind::Voltage, DriveKind::Current] {
        let drive = DriveSignal::from_solution(&spec, &traj, kind, 20_000)?;
        for z_c in [spec.z_f + 2e-5, spec.z_f, spec.z_f - 2e-5] {
            let mut opts = SimOptions::new(z_c, spec.t_f);
            opts.initial = Some(traj.states[0]);
            let run = sim::integrate(&spec.params, &drive, &opts)?;
            let planned = sim::first_crossing(&traj, z_c);
            match (run.contact(), planned) {
                (Ok(hit), Some((t, s))) => println!(
                    "{kind:?} drive, z_c {:.4} mm: simulated {:.4} ms at {:.5} m/s, planned {:.4} ms at {:.5} m/s",
                    z_c * 1e3,
                    hit.t * 1e3,
                    hit.velocity,
                    t * 1e3,
                    s.v
                ),
                _ => println!("{kind:?} drive, z_c {:.4} mm: no contact within the horizon", z_c * 1e3),
            }
        }
    }
    Ok(())
}
