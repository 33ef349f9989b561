#![allow(dead_code)]

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softland::actuator::State;
use softland::ocp::{self, Costate, Mode, OcpSpec};
use softland::trajectory::Trajectory;

pub fn reference_solution(mode: Mode) -> &'static (OcpSpec, Trajectory) {
    static EOS: OnceLock<(OcpSpec, Trajectory)> = OnceLock::new();
    static POS: OnceLock<(OcpSpec, Trajectory)> = OnceLock::new();
    let cell = match mode {
        Mode::Eos => &EOS,
        Mode::Pos => &POS,
    };
    cell.get_or_init(|| {
        let spec = OcpSpec::reference(mode);
        let traj = ocp::continuation_solve(&spec).expect("reference problem solves");
        (spec, traj)
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A state inside the operating range of the reference valve, with the
/// position concentrated near the contact region so probability terms are active.
pub fn random_state(rng: &mut impl Rng, spec: &OcpSpec) -> State {
    let p = &spec.params;
    let z = if rng.random_bool(0.5) {
        spec.z_f + 4.0 * spec.contact.sigma().unwrap_or(1e-5) * rng.random_range(-1.0..1.0)
    } else {
        rng.random_range(p.z_min..p.z_max)
    };
    let v = rng.random_range(-0.5..0.05);
    let alpha = rng.random_range(0.0..0.7) * p.reluctance.flux_limit();
    State::new(z, v, alpha)
}

/// A costate whose components have the magnitudes found along `traj`,
/// with random signs and factors between 0.1 and 10.
pub fn random_costate(rng: &mut impl Rng, traj: &Trajectory) -> Costate {
    let mut scale = [0.0f64; 3];
    for c in &traj.costates {
        for (s, l) in scale.iter_mut().zip(c.to_array()) {
            *s = s.max(l.abs());
        }
    }
    let mut draw = |s: f64| {
        let s = if s > 0.0 { s } else { 1.0 };
        s * rng.random_range(-1.0..1.0) * 10f64.powf(rng.random_range(-1.0..1.0))
    };
    Costate::new(draw(scale[0]), draw(scale[1]), draw(scale[2]))
}

/// Cubic position path from `z0` to `z1` over `[0, tf]` with zero end velocities.
pub fn cubic_path(z0: f64, z1: f64, tf: f64, nodes: usize) -> Trajectory {
    Trajectory::sample(0.0, tf, nodes, |t| {
        let s = t / tf;
        let z = z0 + (z1 - z0) * (3.0 * s * s - 2.0 * s * s * s);
        let v = (z1 - z0) * (6.0 * s - 6.0 * s * s) / tf;
        let a = (z1 - z0) * (6.0 - 12.0 * s) / (tf * tf);
        (State::new(z, v, 0.0), [v, a, 0.0])
    })
    .expect("uniform mesh")
}
