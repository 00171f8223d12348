//! Trains the surrogate and the observation encoder on a small dataset, then
//! filters one held-out trajectory in latent space with and without
//! observations.
//!
//! cargo run --release --example assimilate

use latentfilter::harness::config::ExperimentConfig;
use latentfilter::harness::pipeline::{fit_encoder_for, fit_ldnet, observation_operator, training_view};
use latentfilter::ldensf::{FilterConfig, FilterModels, run_filter};
use latentfilter::obs_encoder::estimate_latent_noise;
use latentfilter::pde::dataset::{Split, generate_dataset};

fn main() -> latentfilter::Result<()> {
    let mut cfg = ExperimentConfig::desk_sw();
    cfg.n_trajectories = 12;
    cfg.ldnet_train.epochs = 60;
    cfg.ldnet_train.stage2_epochs = 0;
    cfg.encoder_train.epochs = 60;

    let data = generate_dataset(&cfg.sim, cfg.n_trajectories, cfg.seed)?;
    let view = training_view(&cfg, &data)?;
    let (ldnet, _, _) = fit_ldnet(&cfg, &data, &view)?;
    let (encoder, losses) = fit_encoder_for(&cfg, &data, &view, &ldnet)?;
    println!("encoder loss {:.3e} -> {:.3e}", losses[0], losses.last().unwrap());

    let rho = 0.1;
    let noise = estimate_latent_noise(&encoder, &data, &view, &data.indices(Split::Validation), rho, 4, 0)?;
    let models = FilterModels { ldnet: &ldnet, encoder: &encoder, noise: &noise };
    let op = observation_operator(&cfg)?;
    let traj = data.indices(Split::Evaluation)[0];
    let base = FilterConfig { rho, ..FilterConfig::default() };
    let filtered = run_filter(&data, traj, &view, models, &op, &base)?;
    let free = run_filter(&data, traj, &view, models, &op, &FilterConfig { assimilate: false, ..base })?;

    println!("step  state RMSE (filtered)  state RMSE (no data)  parameter RMSE (filtered)");
    for (a, b) in filtered.metrics.iter().zip(&free.metrics) {
        println!(
            "{:>4}  {:>21.4}  {:>20.4}  {:>25.4}",
            a.step,
            a.state_rmse.unwrap_or(f64::NAN),
            b.state_rmse.unwrap_or(f64::NAN),
            a.param_rmse
        );
    }
    Ok(())
}
