//! Voltage pulses into the reference valve: closing time, impact speed and
//! bounces as the amplitude rises.

use softland::actuator::ActuatorParams;
use softland::sim::{self, DriveSignal, SimOptions};

fn main() -> softland::error::Result<()> {
    let p = ActuatorParams::reference_valve();
    println!("amplitude  contact(ms)  impact(m/s)  bounces  energy(mJ)");
    for amplitude in [25.0, 30.0, 35.0, 40.0, 45.0, 50.0] {
        let drive = DriveSignal::voltage_pulse(amplitude, 15e-3, 15e-3);
        let mut opts = SimOptions::new(p.z_min, 30e-3);
        opts.restitution = 0.3;
        let run = sim::integrate(&p, &drive, &opts)?;
        match run.contact() {
            Ok(hit) => println!(
                "{amplitude:>7.0} V  {:>11.3}  {:>11.4}  {:>7}  {:>10.2}",
                hit.t * 1e3,
                hit.velocity,
                run.bounces(),
                run.energy_mj()
            ),
            Err(_) => println!("{amplitude:>7.0} V  {:>11}  {:>11}  {:>7}  {:>10.2}", "-", "-", 0, run.energy_mj()),
        }
    }
    Ok(())
}
