//! Energy-optimal transfer: the armature ends at rest on the target, and the
//! cost terms show what that does to a contact at an uncertain position.

use softland::cost;
use softland::ocp::{self, Mode, OcpSpec};

fn main() -> softland::error::Result<()> {
    let spec = OcpSpec::reference(Mode::Eos);
    let traj = ocp::solve(&spec, None)?;
    let end = traj.final_state();
    let peak = traj.control.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{} nodes, final z {:.4} mm, v {:.2e} m/s, peak voltage {peak:.1} V (bound {:.1} V)",
        traj.len(),
        end.z * 1e3,
        end.v,
        spec.u_plus
    );
    let terms = cost::total_cost(&traj, &spec)?;
    println!("integral of u^2: {:.4} V^2 s, electrical energy {:.3} mJ", terms.j_eos, ocp::energy_mj(&spec, &traj));
    // Judged against the probabilistic contact model of the other problem.
    let judged = ocp::evaluate(&OcpSpec::reference(Mode::Pos), &traj)?;
    println!(
        "under the contact model: E[Vc] {:.4} m/s, E[Ac] {:.1} m/s^2",
        judged.expected_velocity, judged.expected_acceleration
    );
    Ok(())
}
