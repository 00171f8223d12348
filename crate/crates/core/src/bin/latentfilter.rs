use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use latentfilter::checkpoint::Checkpoint;
use latentfilter::ensf::DiffusionSchedule;
use latentfilter::harness::compare::{Trained, timing_table};
use latentfilter::harness::config::{ExperimentConfig, Preset};
use latentfilter::harness::metrics::{emit_timing, filter_run_csv, parse_summary, parse_timing, summary_path};
use latentfilter::harness::pipeline::{RunDir, fit_encoder_for, fit_ldnet, noise_models, run_pipeline, training_view};
use latentfilter::ldensf::{FilterConfig, FilterModels, run_filter};
use latentfilter::ldnet::{LdnetModel, retrain_reconstruction};
use latentfilter::obs_encoder::{EncoderModel, estimate_latent_noise};
use latentfilter::pde::dataset::{Dataset, Split, SystemKind, generate_dataset, subsample};
use latentfilter::{Error, Result};

#[derive(Parser)]
#[command(name = "latentfilter", about = "Latent-space ensemble score filtering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file; overrides --system and --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "sw")]
    system: String,
    #[arg(long, default_value = "desk")]
    preset: String,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::preset(SystemKind::parse(&self.system)?, self.preset.parse::<Preset>()?)),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a trajectory dataset.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        trajectories: Option<usize>,
        /// Cells per side.
        #[arg(long)]
        grid: Option<usize>,
        /// Parameter-sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the latent dynamics network.
    TrainLdnet {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        stage: Stage,
        /// Stage-1 checkpoint to retrain; required with `--stage 2`.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the observation encoder against a trained LDNet.
    TrainEncoder {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ldnet: PathBuf,
        /// Observation lattice side.
        #[arg(long)]
        obs_grid: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter one trajectory and write per-step metrics.
    Assimilate {
        #[arg(long)]
        ldnet: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        /// Dataset holding the truth trajectory.
        #[arg(long)]
        truth: PathBuf,
        /// Trajectory index; defaults to the first evaluation trajectory.
        #[arg(long)]
        trajectory: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 20)]
        members: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Solver steps between assimilation times; defaults to the desk preset.
        #[arg(long)]
        time_stride: Option<usize>,
        #[arg(long, default_value_t = 4)]
        noise_samples: usize,
        #[arg(long, default_value_t = 0.05)]
        eps_alpha: f64,
        #[arg(long, default_value_t = 100)]
        diffusion_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every pending pipeline phase and compare methods.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write the timing table.
        #[arg(long)]
        timing: bool,
    },
    /// Print the summary and timing tables of a run directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { cfg, trajectories, grid, seed, out } => {
            let c = cfg.load()?;
            let sim = grid.map_or_else(|| c.sim.clone(), |n| c.sim.with_grid(n));
            let d = generate_dataset(&sim, trajectories.unwrap_or(c.n_trajectories), seed.unwrap_or(c.data_seed))?;
            d.save(&out)?;
            println!("{} trajectories of {} states written to {}", d.trajectories.len(), d.n_stored(), out.display());
        }
        Command::TrainLdnet { cfg, data, stage, init, out } => {
            let mut c = cfg.load()?;
            let d = Dataset::load(data)?;
            let view = training_view(&c, &d)?;
            let (m, s2) = match stage {
                Stage::One | Stage::Both => {
                    if matches!(stage, Stage::One) {
                        c.ldnet_train.stage2_epochs = 0;
                    }
                    let (m, log, s2) = fit_ldnet(&c, &d, &view)?;
                    println!("stage 1 final loss {:.4e}", log.losses.last().copied().unwrap_or(f64::NAN));
                    (m, s2)
                }
                Stage::Two => {
                    let init = init.ok_or_else(|| Error::Config("--stage 2 needs --init".into()))?;
                    let mut m = LdnetModel::from_checkpoint(&Checkpoint::load(init)?)?;
                    let s2 = retrain_reconstruction(&mut m, &d, &view, &c.ldnet_train)?;
                    (m, Some(s2))
                }
            };
            m.to_checkpoint().save(&out)?;
            if let Some((e, v)) = s2.and_then(|l| l.validation.last().copied()) {
                println!("stage 2 validation relative RMSE {v:.4} at epoch {e}");
            }
        }
        Command::TrainEncoder { cfg, data, ldnet, obs_grid, out } => {
            let mut c = cfg.load()?;
            c.obs_grid = obs_grid.unwrap_or(c.obs_grid);
            let d = Dataset::load(data)?;
            let l = LdnetModel::from_checkpoint(&Checkpoint::load(ldnet)?)?;
            let view = training_view(&c, &d)?;
            let (e, losses) = fit_encoder_for(&c, &d, &view, &l)?;
            e.to_checkpoint().save(&out)?;
            println!("encoder final loss {:.4e}", losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Assimilate {
            ldnet,
            encoder,
            truth,
            trajectory,
            noise,
            members,
            seed,
            time_stride,
            noise_samples,
            eps_alpha,
            diffusion_steps,
            out,
        } => {
            let l = LdnetModel::from_checkpoint(&Checkpoint::load(ldnet)?)?;
            let e = EncoderModel::from_checkpoint(&Checkpoint::load(encoder)?)?;
            let d = Dataset::load(truth)?;
            let stride = time_stride.unwrap_or_else(|| ExperimentConfig::preset(d.kind, Preset::Desk).time_stride);
            let view = subsample(&d, stride, d.n_cells(), seed)?;
            let traj = match trajectory {
                Some(j) => j,
                None => *d.indices(Split::Evaluation).first().ok_or_else(|| Error::Config("no evaluation trajectory".into()))?,
            };
            let val = d.indices(Split::Validation);
            let nm = estimate_latent_noise(&e, &d, &view, &val, noise, noise_samples, seed)?;
            let fc = FilterConfig {
                n_members: members,
                rho: noise,
                schedule: DiffusionSchedule::new(eps_alpha, diffusion_steps)?,
                seed,
                ..FilterConfig::default()
            };
            let run = run_filter(&d, traj, &view, FilterModels { ldnet: &l, encoder: &e, noise: &nm }, &e.op, &fc)?;
            std::fs::write(&out, filter_run_csv(&run))?;
            let last = run.final_metrics();
            println!(
                "trajectory {traj}: final latent {:.4}, parameter {:.4}, state {:.4}",
                last.latent_rmse,
                last.param_rmse,
                last.state_rmse.unwrap_or(f64::NAN)
            );
        }
        Command::Compare { cfg, timing } => {
            let c = cfg.load()?;
            let report = run_pipeline(&c)?;
            let phases: Vec<&str> = report.executed.iter().map(|p| p.name()).collect();
            println!("ran phases: [{}] in {}", phases.join(", "), report.dir.display());
            if timing {
                let dir = RunDir::new(&report.dir);
                let d = Dataset::load(dir.root.join("dataset.lfd"))?;
                let view = training_view(&c, &d)?;
                let l = LdnetModel::from_checkpoint(&Checkpoint::load(dir.root.join("ldnet.ckpt"))?)?;
                let e = EncoderModel::from_checkpoint(&Checkpoint::load(dir.root.join("encoder.ckpt"))?)?;
                let nm = noise_models(&c, &d, &view, &e)?;
                let table = timing_table(&c, &d, &view, &Trained { ldnet: &l, encoder: &e, noise: &nm })?;
                emit_timing(&table, dir.timing())?;
            }
            print_report(&report.dir)?;
        }
        Command::Report { dir } => print_report(&dir)?,
    }
    Ok(())
}

fn print_report(dir: &std::path::Path) -> Result<()> {
    let rows = parse_summary(&std::fs::read_to_string(summary_path(&dir.join("metrics.csv")))?)?;
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!("final-quarter relative RMSE");
    println!("{:<8} {:>6} {:>8} {:>8} {:>8}", "method", "noise", "latent", "param", "state");
    for r in &rows {
        println!(
            "{:<8} {:>6} {:>8} {:>8} {:>8}",
            r.method.to_string(),
            r.noise,
            cell(r.latent_rmse),
            cell(r.param_rmse),
            cell(r.state_rmse)
        );
    }
    let timing = dir.join("timing.csv");
    if timing.exists() {
        let table = parse_timing(&std::fs::read_to_string(timing)?)?;
        println!("\nwall time over {} steps (ms)", table.first().map_or(0, |t| t.steps));
        println!("{:<8} {:>7} {:>10} {:>10} {:>10} {:>7}", "method", "members", "T_d", "T_f", "T_r", "D_s");
        for t in &table {
            println!("{:<8} {:>7} {:>10.2} {:>10.2} {:>10.2} {:>7}", t.method.to_string(), t.members, t.t_d, t.t_f, t.t_r, t.dim);
        }
    }
    Ok(())
}
