//! Times one forecast step of a 100-member ensemble with the PDE solver and
//! with the latent surrogate (an untrained network costs the same).
//!
//! cargo run --release --example evolution_timing

use latentfilter::harness::compare::measure_evolution;
use latentfilter::harness::config::ExperimentConfig;
use latentfilter::harness::pipeline::training_view;
use latentfilter::ldnet::LdnetModel;
use latentfilter::pde::dataset::generate_dataset;

fn main() -> latentfilter::Result<()> {
    let mut cfg = ExperimentConfig::desk_sw();
    cfg.n_trajectories = 3;
    let data = generate_dataset(&cfg.sim, cfg.n_trajectories, cfg.seed)?;
    let view = training_view(&cfg, &data)?;
    let ldnet = LdnetModel::new(&cfg.arch, 0)?;
    let (latent_ms, full_ms) = measure_evolution(&data, &ldnet, &view, 100, 3, 0)?;
    println!("state dimension {}, latent dimension {}", data.state_dim(), ldnet.d_s + ldnet.d_u);
    println!("solver {full_ms:.2} ms, surrogate {latent_ms:.4} ms, ratio {:.0}", full_ms / latent_ms);
    Ok(())
}
