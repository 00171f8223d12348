//! Runs the whole resumable experiment (simulation, training, noise
//! estimation, filtering with every method at every noise level) on a
//! reduced shallow-water setup and prints the tail-averaged errors.
//! A second invocation reuses the stored artifacts.
//!
//! cargo run --release --example compare_methods [out_dir]

use latentfilter::harness::config::ExperimentConfig;
use latentfilter::harness::metrics::summarize;
use latentfilter::harness::pipeline::run_pipeline;

fn main() -> latentfilter::Result<()> {
    let mut cfg = ExperimentConfig::desk_sw();
    cfg.out_dir = std::env::args().nth(1).unwrap_or_else(|| "runs/example-compare".into()).into();
    cfg.n_trajectories = 12;
    cfg.ldnet_train.epochs = 60;
    cfg.ldnet_train.stage2_epochs = 0;
    cfg.encoder_train.epochs = 60;
    cfg.eval_trajectories = 1;

    let report = run_pipeline(&cfg)?;
    let ran: Vec<&str> = report.executed.iter().map(|p| p.name()).collect();
    println!("phases run: [{}], artifacts in {}", ran.join(", "), report.dir.display());
    println!("{:<16} {:>5}  {:>8}  {:>8}  {:>8}", "method", "noise", "latent", "param", "state");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for row in summarize(&report.metrics) {
        println!(
            "{:<16} {:>5}  {:>8}  {:>8}  {:>8}",
            row.method.to_string(),
            row.noise,
            show(row.latent_rmse),
            show(row.param_rmse),
            show(row.state_rmse)
        );
    }
    Ok(())
}
