//! Runs forced 2-D turbulence at a few Reynolds numbers and prints the
//! kinetic energy of the stored velocity fields.
//!
//! cargo run --release --example kolmogorov

use latentfilter::pde::kolmogorov::{KolmogorovConfig, SpectralGrid, initial_vorticity, simulate_kf};

fn main() -> latentfilter::Result<()> {
    let cfg = KolmogorovConfig::desk();
    let grid = SpectralGrid::new(cfg.n);
    let omega0 = initial_vorticity(cfg.n);
    for re in [500.0, 1000.0, 1500.0] {
        let fields = simulate_kf(re, &cfg, &grid, &omega0)?;
        let cells = cfg.n * cfg.n;
        let energy: Vec<f64> = fields
            .iter()
            .map(|f| 0.5 * f.iter().map(|v| v * v).sum::<f64>() / cells as f64)
            .collect();
        let shown: Vec<String> = energy.iter().step_by(energy.len().div_ceil(8).max(1)).map(|e| format!("{e:.3}")).collect();
        println!("Re {re:>6}: {} snapshots, energy {}", fields.len(), shown.join(" "));
    }
    Ok(())
}
