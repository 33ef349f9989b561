//! Contact-time statistics along prescribed trajectories, checked against
//! quadrature identities and a sampling oracle.

mod common;

use proptest::prelude::*;
use softland::actuator::{ActuatorParams, State};
use softland::contact::{self, BounceConfig, ContactModel, MotionSign, Saturation};
use softland::sim;
use softland::trajectory::Trajectory;

const Z0: f64 = 1.6e-3;
const MU: f64 = 3.99e-4;
const TF: f64 = 3.5e-3;

/// Cubic approach that overshoots the mean by `over` and carries a flux just
/// below the spring balance, so the bounce acceleration is a take-off.
fn approach(over: f64, nodes: usize) -> Trajectory {
    let p = ActuatorParams::reference_valve();
    let z1 = MU - over;
    let slope = p.reluctance.gap(MU).d1;
    let alpha = |z: f64| 0.9 * (2.0 * p.spring_stiffness * (p.spring_rest - z) / slope).sqrt();
    let base = common::cubic_path(Z0, z1, TF, nodes);
    let states: Vec<State> = base.states.iter().map(|s| State::new(s.z, s.v, alpha(s.z))).collect();
    let rates = base
        .states
        .iter()
        .zip(&base.state_rates)
        .map(|(s, r)| [r[0], r[1], -0.81 * p.spring_stiffness / slope / alpha(s.z) * s.v])
        .collect();
    Trajectory::from_states(base.t.clone(), states, rates).unwrap()
}

/// Sampling oracle: draw the contact position, find the crossing, read the state there.
fn oracle(traj: &Trajectory, cm: &ContactModel, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = ActuatorParams::reference_valve();
    let bc = BounceConfig::default();
    let (mut v, mut a, mut t) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let z = sim::sample_contact_position(cm, seed, i as u64);
        if let Some((tc, s)) = sim::first_crossing(traj, z) {
            v.push(s.v);
            a.push(contact::saturated_bounce_acceleration(&s, &p, cm, &bc, Saturation::Hard));
            t.push(tc);
        }
    }
    (v, a, t)
}

fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn time_density_integrates_to_the_probability(over_sigmas in -3.0..6.0f64, log_sigma in -7.5..-4.5f64) {
        let sigma = 10f64.powf(log_sigma);
        let traj = approach(over_sigmas * sigma, 401);
        let end = traj.final_state().z;
        let cm = ContactModel::gaussian(MU, sigma, MotionSign::Making, Z0, end, TF).unwrap();
        let integral = contact::contact_time_integral(&traj, &cm);
        prop_assert!((integral - cm.probability()).abs() <= 1e-6, "{integral} vs {}", cm.probability());
    }
}

#[test]
fn expectations_do_not_depend_on_the_mesh() {
    let p = ActuatorParams::reference_valve();
    let bc = BounceConfig::default();
    for over in [0.0, 2e-5, 6e-5] {
        let traj = approach(over, 301);
        let fine = traj.refined(4);
        assert_eq!(fine.len(), 4 * (traj.len() - 1) + 1);
        let cm = ContactModel::gaussian(MU, 2e-5, MotionSign::Making, Z0, traj.final_state().z, TF).unwrap();
        let v = contact::expected_contact_velocity(&traj, &cm).unwrap();
        let v_fine = contact::expected_contact_velocity(&fine, &cm).unwrap();
        assert!((v - v_fine).abs() <= 1e-6, "{v} vs {v_fine}");
        let a = contact::expected_contact_acceleration(&traj, &cm, &p, &bc, Saturation::Smooth).unwrap();
        let a_fine = contact::expected_contact_acceleration(&fine, &cm, &p, &bc, Saturation::Smooth).unwrap();
        assert!((a - a_fine).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {a_fine}");
    }
}

fn interquartile_range(mut x: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    let q = |f: f64| x[((x.len() - 1) as f64 * f).round() as usize];
    q(0.75) - q(0.25)
}

#[test]
fn narrower_position_spread_concentrates_contact_times() {
    let traj = approach(1e-4, 2001);
    let end = traj.final_state().z;
    let mut last = f64::INFINITY;
    for sigma in [3e-5, 3e-6, 3e-7] {
        let cm = ContactModel::gaussian(MU, sigma, MotionSign::Making, Z0, end, TF).unwrap();
        let (_, _, t) = oracle(&traj, &cm, 100_000, 5);
        let iqr = interquartile_range(t);
        assert!(iqr < last, "IQR {iqr} at sigma {sigma} did not shrink from {last}");
        last = iqr;
    }
}

#[test]
fn sampled_means_converge_at_the_square_root_rate() {
    let p = ActuatorParams::reference_valve();
    let bc = BounceConfig::default();
    let traj = approach(0.0, 2001);
    let cm = ContactModel::gaussian(MU, 2e-5, MotionSign::Making, Z0, traj.final_state().z, TF).unwrap();
    let ev = contact::expected_contact_velocity(&traj, &cm).unwrap();
    let ea = contact::expected_contact_acceleration(&traj, &cm, &p, &bc, Saturation::Hard).unwrap();
    let mut ses = Vec::new();
    for n in [10_000, 100_000, 1_000_000] {
        let (v, a, _) = oracle(&traj, &cm, n, 9);
        let (mv, sv) = mean_and_se(&v);
        let (ma, sa) = mean_and_se(&a);
        assert!((mv - ev).abs() <= 4.0 * sv, "n = {n}: {mv} vs {ev} (se {sv})");
        assert!((ma - ea).abs() <= 4.0 * sa, "n = {n}: {ma} vs {ea} (se {sa})");
        ses.push((sv, sa));
    }
    // Standard errors shrink by sqrt(10) per decade of samples.
    for w in ses.windows(2) {
        let rv = w[0].0 / w[1].0;
        let ra = w[0].1 / w[1].1;
        assert!((rv / 10f64.sqrt() - 1.0).abs() < 0.1, "velocity se ratio {rv}");
        assert!((ra / 10f64.sqrt() - 1.0).abs() < 0.1, "acceleration se ratio {ra}");
    }
}

#[test]
fn single_position_gives_the_trajectory_value() {
    let traj = approach(5e-5, 2001);
    let cm = ContactModel { density: contact::Density::PointMass { at: MU }, ..ContactModel::gaussian(MU, 1e-5, MotionSign::Making, Z0, traj.final_state().z, TF).unwrap() };
    let (v, _, _) = oracle(&traj, &cm, 100, 1);
    let exact = sim::first_crossing(&traj, MU).unwrap().1.v;
    assert_eq!(v.len(), 100);
    assert!(v.iter().all(|x| *x == exact));
}
