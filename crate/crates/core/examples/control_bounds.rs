//! Voltage bounds that remain feasible when the coil resistance is only
//! known to lie in a range.

use softland::actuator::ActuatorParams;
use softland::ocp::control_bounds;

fn main() -> softland::error::Result<()> {
    let r = ActuatorParams::reference_valve().resistance;
    let (u_min, u_max) = (-50.0, 50.0);
    println!("R range (ohm)     u- (V)    u+ (V)");
    for spread in [0.0, 0.05, 0.1, 0.2, 0.3] {
        let (r_min, r_max) = (r * (1.0 - spread), r * (1.0 + spread));
        let (lo, hi) = control_bounds(u_min, u_max, r, r_min, r_max)?;
        println!("{r_min:>6.2}..{r_max:<6.2}  {lo:>8.2}  {hi:>8.2}");
    }
    Ok(())
}
