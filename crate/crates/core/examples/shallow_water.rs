//! Releases a Gaussian bump in a closed basin and prints the surface
//! height, velocity and discrete mass at every stored snapshot.
//!
//! cargo run --release --example shallow_water

use latentfilter::pde::shallow_water::{ShallowWaterConfig, simulate_sw, sw_initial_bump};

fn main() -> latentfilter::Result<()> {
    let cfg = ShallowWaterConfig::desk();
    let start = sw_initial_bump((0.3 * cfg.length, 0.6 * cfg.length), &cfg)?;
    let dx = cfg.dx();
    let m0 = start.mass(dx);
    let states = simulate_sw(start, &cfg)?;
    println!("{}² grid, dt = {:.1} s, {} snapshots", cfg.n, cfg.dt, states.len());
    println!("time [h]  max η [m]  max |v| [m/s]  mass drift");
    for (k, s) in states.iter().enumerate() {
        let hours = (k * cfg.save_every) as f64 * cfg.dt / 3600.0;
        let eta = s.eta.iter().fold(f64::MIN, |a, &b| a.max(b));
        let v = s.vx.iter().chain(&s.vy).fold(0.0f64, |a, &b| a.max(b.abs()));
        println!("{hours:>8.2}  {eta:>9.4}  {v:>13.4}  {:>10.2e}", (s.mass(dx) - m0) / m0.abs());
    }
    Ok(())
}
