//! Experiment configuration and its key-value text form.
//!
//! ```text
//! [experiment]
//! system = sw
//! preset = desk
//!
//! [filter]
//! noise_levels = 0,0.05,0.1,0.2
//! ```
//!
//! A file only needs the keys it changes; everything else comes from the
//! preset named in `[experiment]`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ensf::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::ldnet::{LdnetArch, LdnetTrainConfig};
use crate::obs_encoder::EncoderTrainConfig;
use crate::optim::{AdamConfig, LrSchedule};
use crate::pde::dataset::{SimConfig, SystemKind};
use crate::pde::kolmogorov::KolmogorovConfig;
use crate::pde::shallow_water::ShallowWaterConfig;

/// Environment variable naming the root for relative output directories.
pub const OUT_ROOT_ENV: &str = "LATENTFILTER_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 64 × 64 grids and small networks, minutes on one core.
    Desk,
    /// Grid, horizon and training settings of the published experiments.
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Ensemble score filter on the full PDE state.
    Ensf,
    LdEnsf,
    /// Prediction only.
    NoAssimilation,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::LdEnsf, Method::NoAssimilation, Method::Ensf];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ensf => "ensf",
            Method::LdEnsf => "ld-ensf",
            Method::NoAssimilation => "none",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensf" => Ok(Method::Ensf),
            "ld-ensf" => Ok(Method::LdEnsf),
            "none" => Ok(Method::NoAssimilation),
            _ => Err(Error::Config(format!("unknown method {s:?} (expected ensf, ld-ensf or none)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    pub preset: Preset,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub methods: Vec<Method>,

    pub sim: SimConfig,
    pub n_trajectories: usize,
    pub data_seed: u64,

    pub arch: LdnetArch,
    pub ldnet_train: LdnetTrainConfig,
    /// Solver steps between retained states.
    pub time_stride: usize,
    /// Spatial points drawn per retained state during training.
    pub n_points: usize,

    pub encoder_train: EncoderTrainConfig,
    /// Observation lattice is `obs_grid × obs_grid`.
    pub obs_grid: usize,
    /// Noisy replicas per trajectory when estimating latent noise.
    pub noise_samples: usize,

    pub noise_levels: Vec<f64>,
    pub n_members: usize,
    pub schedule: DiffusionSchedule,
    /// Evaluation-split trajectories that are filtered.
    pub eval_trajectories: usize,
    /// Ensemble size of the timing table.
    pub timing_members: usize,
    /// Repetitions per timing; the median is kept.
    pub timing_repeats: usize,
}

impl ExperimentConfig {
    pub fn preset(system: SystemKind, preset: Preset) -> Self {
        match (system, preset) {
            (SystemKind::ShallowWater, Preset::Desk) => Self::desk_sw(),
            (SystemKind::ShallowWater, Preset::Paper) => Self::paper_sw(),
            (SystemKind::Kolmogorov, Preset::Desk) => Self::desk_kf(),
            (SystemKind::Kolmogorov, Preset::Paper) => Self::paper_kf(),
        }
    }

    pub fn paper_sw() -> Self {
        Self {
            system: SystemKind::ShallowWater,
            preset: Preset::Paper,
            seed: 0,
            out_dir: PathBuf::from("runs/sw-paper"),
            methods: Method::ALL.to_vec(),
            sim: SimConfig::ShallowWater(ShallowWaterConfig::paper()),
            n_trajectories: 200,
            data_seed: 1,
            arch: LdnetArch::paper_sw(),
            ldnet_train: LdnetTrainConfig::paper_sw(),
            time_stride: 40,
            n_points: 5000,
            encoder_train: EncoderTrainConfig::paper_sw(),
            obs_grid: 10,
            noise_samples: 4,
            noise_levels: vec![0.0, 0.05, 0.1, 0.2],
            n_members: 20,
            schedule: DiffusionSchedule::default(),
            eval_trajectories: 10,
            timing_members: 100,
            timing_repeats: 3,
        }
    }

    pub fn paper_kf() -> Self {
        Self {
            system: SystemKind::Kolmogorov,
            out_dir: PathBuf::from("runs/kf-paper"),
            sim: SimConfig::Kolmogorov(KolmogorovConfig::paper()),
            arch: LdnetArch::paper_kf(),
            ldnet_train: LdnetTrainConfig::paper_kf(),
            time_stride: 5,
            encoder_train: EncoderTrainConfig::paper_kf(),
            ..Self::paper_sw()
        }
    }

    /// 64 × 64 shallow water with 20 training trajectories.
    pub fn desk_sw() -> Self {
        Self {
            preset: Preset::Desk,
            out_dir: PathBuf::from("runs/sw-desk"),
            sim: SimConfig::ShallowWater(ShallowWaterConfig::desk()),
            n_trajectories: 34,
            arch: LdnetArch { dynamics_layers: 4, dynamics_width: 50, recon_layers: 4, recon_width: 64, ..LdnetArch::paper_sw() },
            ldnet_train: LdnetTrainConfig {
                epochs: 300,
                batch_size: 1,
                adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
                schedule: LrSchedule::CosineAnnealing { t_max: 300, eta_min: 3e-5 },
                stage2_epochs: 60,
                stage2_eval_every: 10,
                seed: 0,
            },
            n_points: 128,
            encoder_train: EncoderTrainConfig {
                epochs: 300,
                batch_size: 4,
                hidden: 64,
                layers: 1,
                dropout: 0.0,
                adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
                schedule: LrSchedule::CosineAnnealing { t_max: 300, eta_min: 3e-5 },
                seed: 0,
            },
            time_stride: 20,
            noise_samples: 4,
            eval_trajectories: 2,
            ..Self::paper_sw()
        }
    }

    /// 64 × 64 Kolmogorov flow.
    pub fn desk_kf() -> Self {
        let sw = Self::desk_sw();
        Self {
            system: SystemKind::Kolmogorov,
            out_dir: PathBuf::from("runs/kf-desk"),
            sim: SimConfig::Kolmogorov(KolmogorovConfig::desk()),
            arch: LdnetArch { dynamics_layers: 4, dynamics_width: 64, recon_layers: 4, recon_width: 96, ..LdnetArch::paper_kf() },
            time_stride: 5,
            ..sw
        }
    }

    /// Output directory resolved against `$LATENTFILTER_OUT` when relative.
    pub fn resolved_out_dir(&self) -> PathBuf {
        resolve_out(&self.out_dir)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.sim.kind() != self.system {
            return Err(Error::Config(format!("simulation settings are for {}, experiment is {}", self.sim.kind(), self.system)));
        }
        let save = self.sim.save_every();
        if self.time_stride == 0 || self.time_stride % save != 0 {
            return Err(Error::Config(format!("time stride {} is not a multiple of the save interval {save}", self.time_stride)));
        }
        if self.n_trajectories < 5 {
            return Err(Error::Config("at least 5 trajectories are needed for three splits".into()));
        }
        let cells = self.sim.grid() * self.sim.grid();
        if self.n_points == 0 || self.n_points > cells {
            return Err(Error::Config(format!("{} training points on a grid of {cells}", self.n_points)));
        }
        if self.obs_grid == 0 || self.obs_grid > self.sim.grid() {
            return Err(Error::Config(format!("observation lattice {} does not fit the grid", self.obs_grid)));
        }
        if self.arch.n_fields != self.system.n_fields() || self.arch.d_u != self.system.n_params() {
            return Err(Error::Config("LDNet field or parameter count does not match the system".into()));
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("noise levels must be a non-empty list of non-negative numbers".into()));
        }
        if self.n_members < 2 || self.timing_members < 2 {
            return Err(Error::Config("ensembles need at least 2 members".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.eval_trajectories == 0 || self.noise_samples == 0 || self.timing_repeats == 0 {
            return Err(Error::Config("eval_trajectories, noise_samples and timing_repeats must be positive".into()));
        }
        self.schedule.validate()
    }

    /// Key-value text listing every setting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, entries) in self.sections() {
            let _ = writeln!(out, "[{section}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        }
        out
    }

    fn sections(&self) -> Vec<(&'static str, Vec<(String, String)>)> {
        let kv = |k: &str, v: String| (k.to_string(), v);
        let join = |xs: &[String]| xs.join(",");
        let experiment = vec![
            kv("system", self.system.to_string()),
            kv("preset", self.preset.to_string()),
            kv("seed", self.seed.to_string()),
            kv("out_dir", self.out_dir.display().to_string()),
            kv("methods", join(&self.methods.iter().map(Method::to_string).collect::<Vec<_>>())),
        ];
        let mut simulation: Vec<(String, String)> = self.sim.echo().into_iter().collect();
        simulation.push(kv("n_trajectories", self.n_trajectories.to_string()));
        simulation.push(kv("data_seed", self.data_seed.to_string()));
        let a = &self.arch;
        let t = &self.ldnet_train;
        let ldnet = vec![
            kv("d_s", a.d_s.to_string()),
            kv("dynamics_layers", a.dynamics_layers.to_string()),
            kv("dynamics_width", a.dynamics_width.to_string()),
            kv("recon_layers", a.recon_layers.to_string()),
            kv("recon_width", a.recon_width.to_string()),
            kv("dt", a.dt.to_string()),
            kv("epochs", t.epochs.to_string()),
            kv("batch_size", t.batch_size.to_string()),
            kv("lr", t.adam.lr.to_string()),
            kv("schedule", schedule_text(&t.schedule)),
            kv("stage2_epochs", t.stage2_epochs.to_string()),
            kv("stage2_eval_every", t.stage2_eval_every.to_string()),
            kv("time_stride", self.time_stride.to_string()),
            kv("n_points", self.n_points.to_string()),
        ];
        let e = &self.encoder_train;
        let encoder = vec![
            kv("hidden", e.hidden.to_string()),
            kv("layers", e.layers.to_string()),
            kv("dropout", e.dropout.to_string()),
            kv("epochs", e.epochs.to_string()),
            kv("batch_size", e.batch_size.to_string()),
            kv("lr", e.adam.lr.to_string()),
            kv("schedule", schedule_text(&e.schedule)),
            kv("obs_grid", self.obs_grid.to_string()),
            kv("noise_samples", self.noise_samples.to_string()),
        ];
        let filter = vec![
            kv("noise_levels", join(&self.noise_levels.iter().map(f64::to_string).collect::<Vec<_>>())),
            kv("members", self.n_members.to_string()),
            kv("eps_alpha", self.schedule.eps_alpha.to_string()),
            kv("diffusion_steps", self.schedule.n_steps.to_string()),
            kv("eval_trajectories", self.eval_trajectories.to_string()),
            kv("timing_members", self.timing_members.to_string()),
            kv("timing_repeats", self.timing_repeats.to_string()),
        ];
        vec![("experiment", experiment), ("simulation", simulation), ("ldnet", ldnet), ("encoder", encoder), ("filter", filter)]
    }

    /// Reads a config file; missing keys take the preset's values.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_sections(text)?;
        let lookup = |s: &str, k: &str| entries.get(&(s.to_string(), k.to_string())).map(String::as_str);
        let system = match lookup("experiment", "system") {
            Some(s) => SystemKind::parse(s)?,
            None => SystemKind::ShallowWater,
        };
        let preset = lookup("experiment", "preset").map(str::parse).transpose()?.unwrap_or(Preset::Desk);
        let mut cfg = Self::preset(system, preset);

        let mut sim = cfg.sim.echo();
        for ((section, key), value) in &entries {
            match section.as_str() {
                "experiment" => match key.as_str() {
                    "system" | "preset" => {}
                    "seed" => cfg.seed = num(section, key, value)?,
                    "out_dir" => cfg.out_dir = PathBuf::from(value),
                    "methods" => cfg.methods = list(value)?,
                    _ => return unknown(section, key),
                },
                "simulation" => match key.as_str() {
                    "n_trajectories" => cfg.n_trajectories = num(section, key, value)?,
                    "data_seed" => cfg.data_seed = num(section, key, value)?,
                    k if sim.contains_key(k) => {
                        sim.insert(k.to_string(), value.clone());
                    }
                    _ => return unknown(section, key),
                },
                "ldnet" => {
                    let a = &mut cfg.arch;
                    let t = &mut cfg.ldnet_train;
                    match key.as_str() {
                        "d_s" => a.d_s = num(section, key, value)?,
                        "dynamics_layers" => a.dynamics_layers = num(section, key, value)?,
                        "dynamics_width" => a.dynamics_width = num(section, key, value)?,
                        "recon_layers" => a.recon_layers = num(section, key, value)?,
                        "recon_width" => a.recon_width = num(section, key, value)?,
                        "dt" => a.dt = num(section, key, value)?,
                        "epochs" => t.epochs = num(section, key, value)?,
                        "batch_size" => t.batch_size = num(section, key, value)?,
                        "lr" => t.adam.lr = num(section, key, value)?,
                        "schedule" => t.schedule = parse_schedule(value)?,
                        "stage2_epochs" => t.stage2_epochs = num(section, key, value)?,
                        "stage2_eval_every" => t.stage2_eval_every = num(section, key, value)?,
                        "time_stride" => cfg.time_stride = num(section, key, value)?,
                        "n_points" => cfg.n_points = num(section, key, value)?,
                        _ => return unknown(section, key),
                    }
                }
                "encoder" => {
                    let e = &mut cfg.encoder_train;
                    match key.as_str() {
                        "hidden" => e.hidden = num(section, key, value)?,
                        "layers" => e.layers = num(section, key, value)?,
                        "dropout" => e.dropout = num(section, key, value)?,
                        "epochs" => e.epochs = num(section, key, value)?,
                        "batch_size" => e.batch_size = num(section, key, value)?,
                        "lr" => e.adam.lr = num(section, key, value)?,
                        "schedule" => e.schedule = parse_schedule(value)?,
                        "obs_grid" => cfg.obs_grid = num(section, key, value)?,
                        "noise_samples" => cfg.noise_samples = num(section, key, value)?,
                        _ => return unknown(section, key),
                    }
                }
                "filter" => match key.as_str() {
                    "noise_levels" => cfg.noise_levels = list(value)?,
                    "members" => cfg.n_members = num(section, key, value)?,
                    "eps_alpha" => cfg.schedule.eps_alpha = num(section, key, value)?,
                    "diffusion_steps" => cfg.schedule.n_steps = num(section, key, value)?,
                    "eval_trajectories" => cfg.eval_trajectories = num(section, key, value)?,
                    "timing_members" => cfg.timing_members = num(section, key, value)?,
                    "timing_repeats" => cfg.timing_repeats = num(section, key, value)?,
                    _ => return unknown(section, key),
                },
                _ => return Err(Error::Config(format!("unknown section [{section}]"))),
            }
        }
        cfg.sim = SimConfig::from_echo(system, &sim).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub(crate) fn resolve_out(dir: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

fn parse_sections(text: &str) -> Result<BTreeMap<(String, String), String>> {
    let mut out = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let s = section
            .clone()
            .ok_or_else(|| Error::Config(format!("line {}: key outside any section", i + 1)))?;
        if out.insert((s, k.trim().to_string()), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {:?}", i + 1, k.trim())));
        }
    }
    Ok(out)
}

fn num<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse {value:?}")))
}

fn list<T: FromStr>(value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| Error::Config(format!("bad list entry {v:?}"))))
        .collect()
}

fn unknown<T>(section: &str, key: &str) -> Result<T> {
    Err(Error::Config(format!("unknown key {key:?} in [{section}]")))
}

/// `constant`, `step:<gamma>:<step_size>` or `cosine:<t_max>:<eta_min>`.
pub fn schedule_text(s: &LrSchedule) -> String {
    match s {
        LrSchedule::Constant => "constant".into(),
        LrSchedule::StepLr { gamma, step_size } => format!("step:{gamma}:{step_size}"),
        LrSchedule::CosineAnnealing { t_max, eta_min } => format!("cosine:{t_max}:{eta_min}"),
    }
}

pub fn parse_schedule(s: &str) -> Result<LrSchedule> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let bad = || Error::Config(format!("bad learning-rate schedule {s:?}"));
    match parts.as_slice() {
        ["constant"] => Ok(LrSchedule::Constant),
        ["step", g, n] => Ok(LrSchedule::StepLr { gamma: g.parse().map_err(|_| bad())?, step_size: n.parse().map_err(|_| bad())? }),
        ["cosine", t, e] => Ok(LrSchedule::CosineAnnealing { t_max: t.parse().map_err(|_| bad())?, eta_min: e.parse().map_err(|_| bad())? }),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for system in [SystemKind::ShallowWater, SystemKind::Kolmogorov] {
            for preset in [Preset::Desk, Preset::Paper] {
                let c = ExperimentConfig::preset(system, preset);
                c.validate().unwrap();
                assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
            }
        }
    }

    #[test]
    fn partial_file_overrides_preset() {
        let c = ExperimentConfig::parse("[experiment]\nsystem = kf\n\n[filter]\nmembers = 7 # small\nnoise_levels = 0.1\n").unwrap();
        assert_eq!(c.system, SystemKind::Kolmogorov);
        assert_eq!(c.n_members, 7);
        assert_eq!(c.noise_levels, vec![0.1]);
        assert_eq!(c.arch, ExperimentConfig::desk_kf().arch);
    }

    #[test]
    fn bad_files_are_config_errors() {
        for text in ["[filter]\nmembrs = 3\n", "members = 3\n", "[filter]\nmembers = x\n", "[ldnet]\ntime_stride = 7\n", "[x]\na = 1\n"] {
            assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn schedules_roundtrip() {
        for s in [LrSchedule::Constant, LrSchedule::StepLr { gamma: 0.6, step_size: 200 }, LrSchedule::CosineAnnealing { t_max: 5000, eta_min: 1e-3 }] {
            assert_eq!(parse_schedule(&schedule_text(&s)).unwrap(), s);
        }
    }
}
