use std::path::Path;
use std::process::Command;

use latentfilter::ensf::DiffusionSchedule;
use latentfilter::harness::config::{ExperimentConfig, Method};
use latentfilter::harness::pipeline::{Phase, run_pipeline};
use latentfilter::ldnet::LdnetArch;
use latentfilter::optim::LrSchedule;
use latentfilter::pde::dataset::SimConfig;

/// A run small enough to finish in a few seconds.
fn tiny(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk_sw();
    c.out_dir = dir.to_path_buf();
    if let SimConfig::ShallowWater(sw) = &mut c.sim {
        sw.n = 16;
        sw.dt = sw.default_dt();
        sw.n_steps = 40;
        sw.save_every = 4;
    }
    c.n_trajectories = 6;
    c.time_stride = 8;
    c.n_points = 32;
    c.arch = LdnetArch { d_s: 3, dynamics_layers: 1, dynamics_width: 8, recon_layers: 1, recon_width: 8, ..c.arch };
    c.ldnet_train.epochs = 3;
    c.ldnet_train.stage2_epochs = 2;
    c.ldnet_train.stage2_eval_every = 1;
    c.ldnet_train.schedule = LrSchedule::Constant;
    c.encoder_train.epochs = 2;
    c.encoder_train.hidden = 8;
    c.encoder_train.schedule = LrSchedule::Constant;
    c.obs_grid = 4;
    c.noise_levels = vec![0.0, 0.1];
    c.n_members = 4;
    c.schedule = DiffusionSchedule::new(0.05, 10).unwrap();
    c.eval_trajectories = 1;
    c.timing_members = 4;
    c.timing_repeats = 1;
    c
}

#[test]
fn resume_reruns_only_missing_phases() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let first = run_pipeline(&cfg).unwrap();
    assert_eq!(first.executed, Phase::ALL.to_vec());
    let metrics = std::fs::read(dir.path().join("metrics.csv")).unwrap();

    let again = run_pipeline(&cfg).unwrap();
    assert!(again.executed.is_empty());
    assert_eq!(again.metrics, first.metrics);

    std::fs::remove_file(dir.path().join("encoder.ckpt")).unwrap();
    let resumed = run_pipeline(&cfg).unwrap();
    assert_eq!(resumed.executed, vec![Phase::TrainEncoder, Phase::EstimateNoise, Phase::Assimilate]);
    assert_eq!(std::fs::read(dir.path().join("metrics.csv")).unwrap(), metrics);
}

#[test]
fn changed_config_restarts_from_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    run_pipeline(&cfg).unwrap();
    cfg.n_members = 5;
    assert_eq!(run_pipeline(&cfg).unwrap().executed, Phase::ALL.to_vec());
}

#[test]
fn unassimilated_baseline_ignores_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&tiny(dir.path())).unwrap();
    let pick = |rho: f64| {
        report
            .metrics
            .iter()
            .filter(|r| r.method == Method::NoAssimilation && r.noise == rho)
            .map(|r| (r.step, r.latent_rmse, r.param_rmse, r.state_rmse))
            .collect::<Vec<_>>()
    };
    let (quiet, noisy) = (pick(0.0), pick(0.1));
    assert!(!quiet.is_empty());
    assert_eq!(quiet, noisy);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latentfilter"))
}

#[test]
fn cli_exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "[experiment]\nno_such_key = 1\n").unwrap();
    let out = cli().args(["simulate", "--config"]).arg(&bad).arg("--out").arg(dir.path().join("d.lfd")).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    let out = cli().args(["report", "--dir"]).arg(dir.path().join("missing")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn cli_runs_the_stages_separately() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let cfg_path = dir.path().join("tiny.txt");
    cfg.save(&cfg_path).unwrap();
    let p = |name: &str| dir.path().join(name);
    let ok = |c: &mut Command| {
        let out = c.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    ok(cli().arg("simulate").arg("--config").arg(&cfg_path).arg("--out").arg(p("d.lfd")));
    ok(cli().arg("train-ldnet").arg("--config").arg(&cfg_path).arg("--data").arg(p("d.lfd")).arg("--out").arg(p("l.ckpt")));
    ok(cli()
        .arg("train-encoder")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--data")
        .arg(p("d.lfd"))
        .arg("--ldnet")
        .arg(p("l.ckpt"))
        .arg("--out")
        .arg(p("e.ckpt")));
    ok(cli()
        .arg("assimilate")
        .arg("--ldnet")
        .arg(p("l.ckpt"))
        .arg("--encoder")
        .arg(p("e.ckpt"))
        .arg("--truth")
        .arg(p("d.lfd"))
        .args(["--members", "4", "--diffusion-steps", "10", "--time-stride", "8"])
        .arg("--out")
        .arg(p("run.csv")));
    let csv = std::fs::read_to_string(p("run.csv")).unwrap();
    assert!(csv.starts_with("step,latent_rmse,param_rmse,state_rmse"));
    assert_eq!(csv.lines().count(), 1 + 6);
}
