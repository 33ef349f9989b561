use std::time::Instant;

use softland::ocp::{self, Mode, OcpSpec};

fn main() -> softland::error::Result<()> {
    for mode in [Mode::Eos, Mode::Pos] {
        let spec = OcpSpec::reference(mode);
        let start = Instant::now();
        let traj = ocp::continuation_solve(&spec)?;
        let eval = ocp::evaluate(&spec, &traj)?;
        println!(
            "{mode:?}: nodes {} stages {} residual {:.2e} | E[Vc] {:.4} m/s, E[Ac] {:.2} m/s^2, energy {:.2} mJ ({:.1} s)",
            traj.len(),
            traj.diagnostics.stages,
            traj.diagnostics.max_residual,
            eval.expected_velocity,
            eval.expected_acceleration,
            eval.energy_mj,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
