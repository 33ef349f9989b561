//! Loads the bundled configuration, writes the actuator back out as TOML and
//! reads it again.

use std::path::Path;

use softland::config;

fn main() -> softland::error::Result<()> {
    let spec = config::load(None, None)?;
    println!(
        "{:?} problem: z {:.3} -> {:.3} mm in {:.1} ms, u in [{}, {}] V",
        spec.mode,
        spec.z_0 * 1e3,
        spec.z_f * 1e3,
        spec.t_f * 1e3,
        spec.u_minus,
        spec.u_plus
    );
    let text = config::actuator_toml(&spec.params);
    println!("{text}");
    let back = config::parse_actuator(&text, Path::new("<memory>"))?;
    println!("round trip exact: {}", back == spec.params);
    Ok(())
}
