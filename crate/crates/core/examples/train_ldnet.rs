//! Simulates a small shallow-water dataset, trains the latent dynamics
//! network on it and reports the reconstruction error over time. Data and
//! epochs are cut so it finishes in seconds; the full desk preset
//! (`latentfilter train-ldnet`) reaches roughly a third of this error.
//!
//! cargo run --release --example train_ldnet

use latentfilter::harness::config::ExperimentConfig;
use latentfilter::harness::pipeline::{fit_ldnet, training_view};
use latentfilter::ldnet::{grid_coords, trajectory_rmse, validation_rmse};
use latentfilter::pde::dataset::{Split, generate_dataset};

fn main() -> latentfilter::Result<()> {
    let mut cfg = ExperimentConfig::desk_sw();
    cfg.n_trajectories = 12;
    cfg.ldnet_train.epochs = 60;
    cfg.ldnet_train.stage2_epochs = 20;

    let data = generate_dataset(&cfg.sim, cfg.n_trajectories, cfg.seed)?;
    let view = training_view(&cfg, &data)?;
    let (model, log, stage2) = fit_ldnet(&cfg, &data, &view)?;
    println!("stage 1 loss {:.3e} -> {:.3e}", log.losses[0], log.losses.last().unwrap());
    for (epoch, rmse) in stage2.iter().flat_map(|l| &l.validation) {
        println!("stage 2 epoch {epoch:>3}: validation {rmse:.4}");
    }

    let eval = data.indices(Split::Evaluation);
    println!("evaluation relative RMSE {:.4}", validation_rmse(&model, &data, &eval, &view)?);
    let per_time = trajectory_rmse(&model, &data, eval[0], &view, &grid_coords(&data))?;
    let shown: Vec<String> = per_time.iter().map(|e| format!("{e:.3}")).collect();
    println!("trajectory {} by time: {}", eval[0], shown.join(" "));
    Ok(())
}
