//! End-to-end runs with on-disk checkpoints between phases.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::harness::compare::{Trained, compare_methods};
use crate::harness::config::ExperimentConfig;
use crate::harness::metrics::{MetricsRecord, emit_metrics};
use crate::ldnet::{LdnetModel, TrainLog, retrain_reconstruction, train_ldnet};
use crate::obs_encoder::{EncoderModel, LatentNoiseModel, ObservationOperator, estimate_latent_noise, train_encoder};
use crate::pde::dataset::{Dataset, Split, Subsample, generate_dataset, subsample};
use crate::rng::derive;

const TAG_LDNET: u64 = 0x61;
const TAG_ENCODER: u64 = 0x62;
const TAG_NOISE: u64 = 0x63;
const TAG_POINTS: u64 = 0x64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Simulate,
    TrainLdnet,
    TrainEncoder,
    EstimateNoise,
    Assimilate,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Simulate, Phase::TrainLdnet, Phase::TrainEncoder, Phase::EstimateNoise, Phase::Assimilate];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Simulate => "simulate",
            Phase::TrainLdnet => "train-ldnet",
            Phase::TrainEncoder => "train-encoder",
            Phase::EstimateNoise => "estimate-noise",
            Phase::Assimilate => "assimilate",
        }
    }

    /// File whose presence marks the phase as done.
    pub fn artifact(self) -> &'static str {
        match self {
            Phase::Simulate => "dataset.lfd",
            Phase::TrainLdnet => "ldnet.ckpt",
            Phase::TrainEncoder => "encoder.ckpt",
            Phase::EstimateNoise => "latent_noise.csv",
            Phase::Assimilate => "metrics.csv",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Paths of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn artifact(&self, phase: Phase) -> PathBuf {
        self.root.join(phase.artifact())
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn ldnet_log(&self) -> PathBuf {
        self.root.join("ldnet_log.csv")
    }

    pub fn encoder_log(&self) -> PathBuf {
        self.root.join("encoder_log.csv")
    }

    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.csv")
    }
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub dir: PathBuf,
    /// Phases executed by this call, in order.
    pub executed: Vec<Phase>,
    pub metrics: Vec<MetricsRecord>,
}

/// Training view of a dataset under `cfg`.
pub fn training_view(cfg: &ExperimentConfig, data: &Dataset) -> Result<Subsample> {
    subsample(data, cfg.time_stride, cfg.n_points, derive(cfg.seed, &[TAG_POINTS]))
}

pub fn observation_operator(cfg: &ExperimentConfig) -> Result<ObservationOperator> {
    ObservationOperator::all_fields(cfg.sim.grid(), cfg.obs_grid, cfg.system.n_fields())
}

/// Stage 1 and (if configured) stage 2.
pub fn fit_ldnet(cfg: &ExperimentConfig, data: &Dataset, view: &Subsample) -> Result<(LdnetModel, TrainLog, Option<TrainLog>)> {
    let mut model = LdnetModel::new(&cfg.arch, derive(cfg.seed, &[TAG_LDNET, 0]))?;
    let mut tc = cfg.ldnet_train.clone();
    tc.seed = derive(cfg.seed, &[TAG_LDNET, 1]);
    let log = train_ldnet(&mut model, data, view, &tc)?;
    let stage2 = if tc.stage2_epochs > 0 { Some(retrain_reconstruction(&mut model, data, view, &tc)?) } else { None };
    Ok((model, log, stage2))
}

pub fn fit_encoder_for(cfg: &ExperimentConfig, data: &Dataset, view: &Subsample, ldnet: &LdnetModel) -> Result<(EncoderModel, Vec<f64>)> {
    let mut ec = cfg.encoder_train.clone();
    ec.seed = derive(cfg.seed, &[TAG_ENCODER]);
    train_encoder(ldnet, data, view, &observation_operator(cfg)?, &ec)
}

/// One latent noise model per configured noise level, from the
/// validation split.
pub fn noise_models(cfg: &ExperimentConfig, data: &Dataset, view: &Subsample, encoder: &EncoderModel) -> Result<Vec<LatentNoiseModel>> {
    let val = data.indices(Split::Validation);
    cfg.noise_levels
        .iter()
        .map(|&rho| estimate_latent_noise(encoder, data, view, &val, rho, cfg.noise_samples, derive(cfg.seed, &[TAG_NOISE])))
        .collect()
}

pub fn write_noise_models(models: &[LatentNoiseModel], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("rho,std\n");
    for m in models {
        let std: Vec<String> = m.std.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{},{}", m.rho, std.join(" "));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_noise_models(path: impl AsRef<Path>) -> Result<Vec<LatentNoiseModel>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("rho,std") {
        return Err(Error::Format("latent noise file lacks its header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (rho, std) = l.split_once(',').ok_or_else(|| Error::Format(format!("bad noise row {l:?}")))?;
            let bad = |v: &str| Error::Format(format!("bad number {v:?}"));
            Ok(LatentNoiseModel {
                rho: rho.parse().map_err(|_| bad(rho))?,
                std: std.split_whitespace().map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn write_losses(path: &Path, stage1: &TrainLog, stage2: Option<&TrainLog>) -> Result<()> {
    let mut out = String::from("stage,epoch,loss,validation_rmse\n");
    for (e, l) in stage1.losses.iter().enumerate() {
        let _ = writeln!(out, "1,{e},{l},");
    }
    if let Some(s2) = stage2 {
        for &(e, v) in &s2.validation {
            let _ = writeln!(out, "2,{e},,{v}");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn phase<T>(p: Phase, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Phase { phase: p.name(), source: Box::new(e) })
}

/// First phase whose artifact is missing, or `None` when all are present.
/// A changed config restarts from the beginning.
pub fn first_pending(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Option<Phase>> {
    match std::fs::read_to_string(dir.config()) {
        Ok(text) => {
            let mut stored = ExperimentConfig::parse(&text)?;
            stored.out_dir = cfg.out_dir.clone();
            if stored != *cfg {
                return Ok(Some(Phase::Simulate));
            }
        }
        Err(_) => return Ok(Some(Phase::Simulate)),
    }
    Ok(Phase::ALL.into_iter().find(|&p| !dir.artifact(p).exists()))
}

/// Runs every pending phase. Phases whose artifacts exist are loaded, not
/// recomputed; everything after the first missing artifact reruns.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let dir = RunDir::new(cfg.resolved_out_dir());
    std::fs::create_dir_all(&dir.root)?;
    let start = first_pending(cfg, &dir)?;
    cfg.save(dir.config())?;
    let mut executed = Vec::new();
    let due = |p: Phase| start.is_some_and(|s| p >= s);

    let data = if due(Phase::Simulate) {
        executed.push(Phase::Simulate);
        let d = phase(Phase::Simulate, generate_dataset(&cfg.sim, cfg.n_trajectories, cfg.data_seed))?;
        d.save(dir.artifact(Phase::Simulate))?;
        d
    } else {
        Dataset::load(dir.artifact(Phase::Simulate))?
    };
    let view = training_view(cfg, &data)?;

    let ldnet = if due(Phase::TrainLdnet) {
        executed.push(Phase::TrainLdnet);
        let (m, log, s2) = phase(Phase::TrainLdnet, fit_ldnet(cfg, &data, &view))?;
        write_losses(&dir.ldnet_log(), &log, s2.as_ref())?;
        m.to_checkpoint().save(dir.artifact(Phase::TrainLdnet))?;
        m
    } else {
        LdnetModel::from_checkpoint(&Checkpoint::load(dir.artifact(Phase::TrainLdnet))?)?
    };

    let encoder = if due(Phase::TrainEncoder) {
        executed.push(Phase::TrainEncoder);
        let (e, losses) = phase(Phase::TrainEncoder, fit_encoder_for(cfg, &data, &view, &ldnet))?;
        let mut log = String::from("epoch,loss\n");
        for (i, l) in losses.iter().enumerate() {
            let _ = writeln!(log, "{i},{l}");
        }
        std::fs::write(dir.encoder_log(), log)?;
        e.to_checkpoint().save(dir.artifact(Phase::TrainEncoder))?;
        e
    } else {
        EncoderModel::from_checkpoint(&Checkpoint::load(dir.artifact(Phase::TrainEncoder))?)?
    };

    let noise = if due(Phase::EstimateNoise) {
        executed.push(Phase::EstimateNoise);
        let n = phase(Phase::EstimateNoise, noise_models(cfg, &data, &view, &encoder))?;
        write_noise_models(&n, dir.artifact(Phase::EstimateNoise))?;
        n
    } else {
        read_noise_models(dir.artifact(Phase::EstimateNoise))?
    };

    let metrics = if due(Phase::Assimilate) {
        executed.push(Phase::Assimilate);
        let trained = Trained { ldnet: &ldnet, encoder: &encoder, noise: &noise };
        let m = phase(Phase::Assimilate, compare_methods(cfg, &data, &view, &trained))?;
        emit_metrics(&m, dir.artifact(Phase::Assimilate))?;
        m
    } else {
        crate::harness::metrics::read_metrics(dir.artifact(Phase::Assimilate))?
    };
    Ok(PipelineReport { dir: dir.root, executed, metrics })
}
