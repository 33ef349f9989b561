//! Expected contact velocity and take-off acceleration of a fixed approach
//! path as the contact position becomes more uncertain.

use softland::actuator::State;
use softland::contact::{self, ContactModel, MotionSign, Saturation};
use softland::ocp::{Mode, OcpSpec};
use softland::trajectory::Trajectory;

fn main() -> softland::error::Result<()> {
    let spec = OcpSpec::reference(Mode::Pos);
    let p = &spec.params;
    let (z0, z1, tf) = (spec.z_0, spec.z_f, spec.t_f);
    // Smooth cubic descent with a flux that holds 80 % of the spring force.
    let slope = p.reluctance.gap(z1).d1;
    let traj = Trajectory::sample(0.0, tf, 2001, |t| {
        let s = t / tf;
        let z = z0 + (z1 - z0) * (3.0 * s * s - 2.0 * s * s * s);
        let v = (z1 - z0) * (6.0 * s - 6.0 * s * s) / tf;
        let a = (z1 - z0) * (6.0 - 12.0 * s) / (tf * tf);
        let alpha = (1.6 * p.spring_stiffness * (p.spring_rest - z) / slope).sqrt();
        let da = -0.8 * p.spring_stiffness / slope / alpha * v;
        (State::new(z, v, alpha), [v, a, da])
    })?;
    println!("sigma(m)   P(contact)  E[Vc](m/s)  E[Ac](m/s^2)");
    for sigma in [1e-6, 5e-6, 2e-5, 5e-5, 1e-4] {
        let cm = ContactModel::gaussian(z1, sigma, MotionSign::Making, z0, z1, tf)?;
        let ev = contact::expected_contact_velocity(&traj, &cm)?;
        let ea = contact::expected_contact_acceleration(&traj, &cm, p, &spec.bounce, Saturation::Hard)?;
        println!("{sigma:<9.0e}  {:>10.4}  {ev:>10.5}  {ea:>12.3}", cm.probability());
    }
    Ok(())
}
