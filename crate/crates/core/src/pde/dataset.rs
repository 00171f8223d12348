//! Trajectory datasets, splits, subsampling and the binary container.
//!
//! Container layout (little-endian):
//!
//! ```text
//! magic      8 bytes "LFDATA\0\0"
//! version    u32
//! kind       string ("sw" | "kf")
//! config     u32 count, then (key, value) string pairs
//! grid       u64 n, u32 field count, field names
//! normalizers  fields, params, coords: u32 count, then (u8 tag, f64, f64)
//! initial    u64 length, f64 values (Kolmogorov initial vorticity; empty otherwise)
//! splits     u64 count, u8 per trajectory (0 train, 1 validation, 2 evaluation)
//! trajectories, each:
//!            u32 param count, f64 params, f64 step size, f64 time offset,
//!            u64 state count, state count × (fields · n²) f64
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;

use crate::checkpoint::{get_f64, get_f64s, get_str, get_u32, get_u64, put_f64, put_f64s, put_str, put_u32, put_u64};
use crate::error::{Error, Result};
use crate::pde::kolmogorov::{KolmogorovConfig, SpectralGrid, initial_vorticity, simulate_kf};
use crate::pde::normalize::{Normalizer, VarNorm};
use crate::pde::shallow_water::{ShallowWaterConfig, sample_bump_center, simulate_sw, sw_initial_bump};
use crate::rng::stream;

pub const MAGIC: &[u8; 8] = b"LFDATA\0\0";
pub const VERSION: u32 = 1;

const TAG_PARAMS: u64 = 1;
const TAG_POINTS: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    ShallowWater,
    Kolmogorov,
}

impl SystemKind {
    pub fn tag(self) -> &'static str {
        match self {
            SystemKind::ShallowWater => "sw",
            SystemKind::Kolmogorov => "kf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sw" | "shallow-water" => Ok(SystemKind::ShallowWater),
            "kf" | "kolmogorov" => Ok(SystemKind::Kolmogorov),
            _ => Err(Error::Config(format!("unknown system {s:?} (expected sw or kf)"))),
        }
    }

    pub fn field_names(self) -> &'static [&'static str] {
        match self {
            SystemKind::ShallowWater => &["eta", "vx", "vy"],
            SystemKind::Kolmogorov => &["vx", "vy"],
        }
    }

    pub fn n_fields(self) -> usize {
        self.field_names().len()
    }

    pub fn n_params(self) -> usize {
        match self {
            SystemKind::ShallowWater => 2,
            SystemKind::Kolmogorov => 1,
        }
    }

    /// Whether the first stored state is part of the subsampled training
    /// sequence. The shallow-water initial bump is; the first retained
    /// Kolmogorov state is not, so that a stride of 5 over 201 retained
    /// states yields 40 steps.
    pub fn keeps_first_state(self) -> bool {
        matches!(self, SystemKind::ShallowWater)
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Solver configuration for either testbed.
#[derive(Clone, Debug, PartialEq)]
pub enum SimConfig {
    ShallowWater(ShallowWaterConfig),
    Kolmogorov(KolmogorovConfig),
}

impl SimConfig {
    pub fn kind(&self) -> SystemKind {
        match self {
            SimConfig::ShallowWater(_) => SystemKind::ShallowWater,
            SimConfig::Kolmogorov(_) => SystemKind::Kolmogorov,
        }
    }

    pub fn grid(&self) -> usize {
        match self {
            SimConfig::ShallowWater(c) => c.n,
            SimConfig::Kolmogorov(c) => c.n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SimConfig::ShallowWater(c) => c.validate(),
            SimConfig::Kolmogorov(c) => c.validate(),
        }
    }

    /// Solver steps between stored states.
    pub fn save_every(&self) -> usize {
        match self {
            SimConfig::ShallowWater(c) => c.save_every,
            SimConfig::Kolmogorov(c) => c.save_every,
        }
    }

    pub fn with_grid(&self, n: usize) -> Self {
        match self {
            SimConfig::ShallowWater(c) => {
                let mut c = ShallowWaterConfig { n, ..c.clone() };
                c.dt = c.default_dt();
                SimConfig::ShallowWater(c)
            }
            SimConfig::Kolmogorov(c) => SimConfig::Kolmogorov(KolmogorovConfig { n, ..c.clone() }),
        }
    }

    /// Key–value echo stored in the dataset header.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        match self {
            SimConfig::ShallowWater(c) => {
                put("n", c.n.to_string());
                put("length", c.length.to_string());
                put("depth", c.depth.to_string());
                put("gravity", c.gravity.to_string());
                put("dt", c.dt.to_string());
                put("n_steps", c.n_steps.to_string());
                put("save_every", c.save_every.to_string());
                put("bump_amplitude", c.bump_amplitude.to_string());
                put("bump_width", c.bump_width.to_string());
            }
            SimConfig::Kolmogorov(c) => {
                put("n", c.n.to_string());
                put("dt", c.dt.to_string());
                put("n_steps", c.n_steps.to_string());
                put("keep_from", c.keep_from.to_string());
                put("save_every", c.save_every.to_string());
                put("re_min", c.re_range.0.to_string());
                put("re_max", c.re_range.1.to_string());
                put("forcing_amplitude", c.forcing_amplitude.to_string());
                put("forcing_wavenumber", c.forcing_wavenumber.to_string());
                put("drag", c.drag.to_string());
                put("max_courant", c.max_courant.to_string());
            }
        }
        m
    }

    pub fn from_echo(kind: SystemKind, m: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(m: &BTreeMap<String, String>, k: &str) -> Result<T> {
            let raw = m.get(k).ok_or_else(|| Error::Format(format!("dataset header lacks {k:?}")))?;
            raw.parse().map_err(|_| Error::Format(format!("bad header value {raw:?} for {k:?}")))
        }
        Ok(match kind {
            SystemKind::ShallowWater => SimConfig::ShallowWater(ShallowWaterConfig {
                n: get(m, "n")?,
                length: get(m, "length")?,
                depth: get(m, "depth")?,
                gravity: get(m, "gravity")?,
                dt: get(m, "dt")?,
                n_steps: get(m, "n_steps")?,
                save_every: get(m, "save_every")?,
                bump_amplitude: get(m, "bump_amplitude")?,
                bump_width: get(m, "bump_width")?,
            }),
            SystemKind::Kolmogorov => SimConfig::Kolmogorov(KolmogorovConfig {
                n: get(m, "n")?,
                dt: get(m, "dt")?,
                n_steps: get(m, "n_steps")?,
                keep_from: get(m, "keep_from")?,
                save_every: get(m, "save_every")?,
                re_range: (get(m, "re_min")?, get(m, "re_max")?),
                forcing_amplitude: get(m, "forcing_amplitude")?,
                forcing_wavenumber: get(m, "forcing_wavenumber")?,
                drag: get(m, "drag")?,
                max_courant: get(m, "max_courant")?,
            }),
        })
    }

    /// Bounds of each parameter coordinate.
    pub fn param_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            SimConfig::ShallowWater(c) => vec![(0.0, c.length), (0.0, c.length)],
            SimConfig::Kolmogorov(c) => vec![c.re_range],
        }
    }

    /// Physical extent of each spatial axis.
    pub fn coord_bounds(&self) -> (f64, f64) {
        match self {
            SimConfig::ShallowWater(c) => (0.0, c.length),
            SimConfig::Kolmogorov(_) => (0.0, 2.0 * std::f64::consts::PI),
        }
    }

    /// Physical coordinate of grid index `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        match self {
            SimConfig::ShallowWater(c) => c.coord(i),
            SimConfig::Kolmogorov(c) => c.coord(i),
        }
    }

    /// Physical times of the first stored state and between stored states.
    pub fn time_axis(&self) -> (f64, f64) {
        match self {
            SimConfig::ShallowWater(c) => (0.0, c.dt * c.save_every as f64),
            SimConfig::Kolmogorov(c) => (c.keep_from as f64 * c.dt, c.dt * c.save_every as f64),
        }
    }

    pub fn n_stored(&self) -> usize {
        match self {
            SimConfig::ShallowWater(c) => c.n_stored(),
            SimConfig::Kolmogorov(c) => c.n_stored(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Evaluation,
}

/// One simulated trajectory in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Physical parameters: bump center `(ξ₁, ξ₂)` or `[Re]`.
    pub params: Vec<f64>,
    /// Physical time between stored states.
    pub step_size: f64,
    /// Physical time of the first stored state.
    pub time_offset: f64,
    /// Stored states, each field-major `[field₀ | field₁ | …]` over `n²` cells.
    pub states: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: SystemKind,
    pub config: SimConfig,
    pub field_norm: Normalizer,
    pub param_norm: Normalizer,
    pub coord_norm: Normalizer,
    /// Kolmogorov initial vorticity shared by every trajectory.
    pub initial_field: Vec<f64>,
    pub splits: Vec<Split>,
    pub trajectories: Vec<Trajectory>,
}

/// Ordered 60/20/20 split sizes, each at least one when `n ≥ 3`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let part = ((0.2 * n as f64).round() as usize).max(1);
    let val = part.min(n.saturating_sub(1) / 2);
    let eval = part.min(n.saturating_sub(1 + val));
    (n - val - eval, val, eval)
}

/// Simulates `n_trajectories` with parameters drawn from `seed`.
pub fn generate_dataset(config: &SimConfig, n_trajectories: usize, seed: u64) -> Result<Dataset> {
    config.validate()?;
    if n_trajectories < 3 {
        return Err(Error::Config("need at least 3 trajectories for a train/validation/evaluation split".into()));
    }
    let kind = config.kind();
    let (time_offset, step_size) = config.time_axis();
    let mut trajectories = Vec::with_capacity(n_trajectories);
    let mut initial_field = Vec::new();
    match config {
        SimConfig::ShallowWater(c) => {
            for j in 0..n_trajectories {
                let mut rng = stream(seed, &[TAG_PARAMS, j as u64]);
                let (cx, cy) = sample_bump_center(c, &mut rng);
                let states = simulate_sw(sw_initial_bump((cx, cy), c)?, c).map_err(|e| trajectory_err(j, e))?;
                trajectories.push(Trajectory {
                    params: vec![cx, cy],
                    step_size,
                    time_offset,
                    states: states.iter().map(|s| s.to_fields()).collect(),
                });
            }
        }
        SimConfig::Kolmogorov(c) => {
            let grid = SpectralGrid::new(c.n);
            initial_field = initial_vorticity(c.n);
            for j in 0..n_trajectories {
                let mut rng = stream(seed, &[TAG_PARAMS, j as u64]);
                let re = c.sample_reynolds(&mut rng);
                let states = simulate_kf(re, c, &grid, &initial_field).map_err(|e| trajectory_err(j, e))?;
                trajectories.push(Trajectory { params: vec![re], step_size, time_offset, states });
            }
        }
    }
    let (n_train, n_val, _) = split_sizes(n_trajectories);
    let splits = (0..n_trajectories)
        .map(|j| if j < n_train { Split::Train } else if j < n_train + n_val { Split::Validation } else { Split::Evaluation })
        .collect();
    let mut ds = Dataset {
        kind,
        config: config.clone(),
        field_norm: Normalizer::new(vec![]),
        param_norm: Normalizer::new(config.param_bounds().iter().map(|&(min, max)| VarNorm::MinMax { min, max }).collect()),
        coord_norm: {
            let (min, max) = config.coord_bounds();
            Normalizer::new(vec![VarNorm::MinMax { min, max }; 2])
        },
        initial_field,
        splits,
        trajectories,
    };
    ds.field_norm = ds.fit_field_norm()?;
    Ok(ds)
}

fn trajectory_err(j: usize, e: Error) -> Error {
    match e {
        Error::BlowUp { step, detail } => Error::BlowUp { step, detail: format!("trajectory {j}: {detail}") },
        other => other,
    }
}

impl Dataset {
    pub fn grid(&self) -> usize {
        self.config.grid()
    }

    pub fn n_fields(&self) -> usize {
        self.kind.n_fields()
    }

    pub fn n_cells(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Full-state dimension `fields · n²`.
    pub fn state_dim(&self) -> usize {
        self.n_fields() * self.n_cells()
    }

    pub fn n_stored(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.states.len())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.splits.len()).filter(|&j| self.splits[j] == split).collect()
    }

    /// Min–max per field over the training split.
    fn fit_field_norm(&self) -> Result<Normalizer> {
        let train = self.indices(Split::Train);
        let cells = self.n_cells();
        let mut vars = Vec::with_capacity(self.n_fields());
        for f in 0..self.n_fields() {
            let values = train
                .iter()
                .flat_map(|&j| self.trajectories[j].states.iter())
                .flat_map(|s| s[f * cells..(f + 1) * cells].iter().copied());
            vars.push(VarNorm::fit_minmax(values)?);
        }
        Ok(Normalizer::new(vars))
    }

    /// Normalized copy of one stored state.
    pub fn normalized_state(&self, traj: usize, t: usize) -> Result<Vec<f64>> {
        let mut s = self.trajectories[traj].states[t].clone();
        self.field_norm.normalize_blocks(&mut s)?;
        Ok(s)
    }

    pub fn normalized_params(&self, traj: usize) -> Result<Vec<f64>> {
        self.param_norm.normalize(&self.trajectories[traj].params)
    }

    /// Normalized `(ξ₁, ξ₂)` of flattened cell index `cell = j·n + i`.
    pub fn normalized_coord(&self, cell: usize) -> (f64, f64) {
        let n = self.grid();
        let (i, j) = (cell % n, cell / n);
        (
            self.coord_norm.vars[0].normalize(self.config.coord(i)),
            self.coord_norm.vars[1].normalize(self.config.coord(j)),
        )
    }

    /// Stored-state indices kept by a solver-step stride.
    pub fn time_indices(&self, time_stride: usize) -> Result<Vec<usize>> {
        let every = self.config.save_every();
        if time_stride == 0 || time_stride % every != 0 {
            return Err(Error::Config(format!(
                "time stride {time_stride} must be a positive multiple of the storage interval {every}"
            )));
        }
        let k = time_stride / every;
        let last = self.n_stored().saturating_sub(1);
        let start = if self.kind.keeps_first_state() { 0 } else { k };
        Ok((start..=last).step_by(k).collect())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        put_str(w, self.kind.tag())?;
        let echo = self.config.echo();
        put_u32(w, echo.len() as u32)?;
        for (k, v) in &echo {
            put_str(w, k)?;
            put_str(w, v)?;
        }
        put_u64(w, self.grid() as u64)?;
        put_u32(w, self.n_fields() as u32)?;
        for name in self.kind.field_names() {
            put_str(w, name)?;
        }
        for nz in [&self.field_norm, &self.param_norm, &self.coord_norm] {
            put_u32(w, nz.len() as u32)?;
            for v in &nz.vars {
                let (tag, a, b) = v.tag();
                w.write_all(&[tag])?;
                put_f64(w, a)?;
                put_f64(w, b)?;
            }
        }
        put_u64(w, self.initial_field.len() as u64)?;
        put_f64s(w, &self.initial_field)?;
        put_u64(w, self.splits.len() as u64)?;
        let tags: Vec<u8> = self
            .splits
            .iter()
            .map(|s| match s {
                Split::Train => 0,
                Split::Validation => 1,
                Split::Evaluation => 2,
            })
            .collect();
        w.write_all(&tags)?;
        for t in &self.trajectories {
            put_u32(w, t.params.len() as u32)?;
            put_f64s(w, &t.params)?;
            put_f64(w, t.step_size)?;
            put_f64(w, t.time_offset)?;
            put_u64(w, t.states.len() as u64)?;
            for s in &t.states {
                put_f64s(w, s)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let kind = SystemKind::parse(&get_str(r)?).map_err(|e| Error::Format(e.to_string()))?;
        let mut echo = BTreeMap::new();
        for _ in 0..get_u32(r)? {
            let k = get_str(r)?;
            echo.insert(k, get_str(r)?);
        }
        let config = SimConfig::from_echo(kind, &echo)?;
        let n = get_u64(r)? as usize;
        let n_fields = get_u32(r)? as usize;
        if n != config.grid() || n_fields != kind.n_fields() {
            return Err(Error::Format("grid header disagrees with the config echo".into()));
        }
        for _ in 0..n_fields {
            get_str(r)?;
        }
        let mut norms = Vec::with_capacity(3);
        for _ in 0..3 {
            let count = get_u32(r)?;
            let mut vars = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let mut tag = [0u8; 1];
                r.read_exact(&mut tag)?;
                vars.push(VarNorm::from_tag(tag[0], get_f64(r)?, get_f64(r)?)?);
            }
            norms.push(Normalizer::new(vars));
        }
        let init_len = get_u64(r)? as usize;
        let initial_field = get_f64s(r, init_len)?;
        let n_traj = get_u64(r)? as usize;
        let mut tags = vec![0u8; n_traj];
        r.read_exact(&mut tags)?;
        let splits = tags
            .iter()
            .map(|t| match t {
                0 => Ok(Split::Train),
                1 => Ok(Split::Validation),
                2 => Ok(Split::Evaluation),
                x => Err(Error::Format(format!("bad split tag {x}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let width = n_fields * n * n;
        let mut trajectories = Vec::with_capacity(n_traj);
        for _ in 0..n_traj {
            let np = get_u32(r)? as usize;
            let params = get_f64s(r, np)?;
            let step_size = get_f64(r)?;
            let time_offset = get_f64(r)?;
            let ns = get_u64(r)? as usize;
            let states = (0..ns).map(|_| get_f64s(r, width)).collect::<Result<Vec<_>>>()?;
            trajectories.push(Trajectory { params, step_size, time_offset, states });
        }
        let mut it = norms.into_iter();
        let (field_norm, param_norm, coord_norm) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        Ok(Self { kind, config, field_norm, param_norm, coord_norm, initial_field, splits, trajectories })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Training view: retained time indices and per-(epoch, trajectory, time)
/// spatial point draws.
#[derive(Clone, Debug)]
pub struct Subsample {
    pub time_indices: Vec<usize>,
    pub n_points: usize,
    pub n_cells: usize,
    pub seed: u64,
}

/// Builds the training view of `dataset`.
pub fn subsample(dataset: &Dataset, time_stride: usize, n_spatial_points: usize, seed: u64) -> Result<Subsample> {
    let n_cells = dataset.n_cells();
    if n_spatial_points == 0 || n_spatial_points > n_cells {
        return Err(Error::Config(format!("{n_spatial_points} spatial points requested from a grid of {n_cells}")));
    }
    Ok(Subsample { time_indices: dataset.time_indices(time_stride)?, n_points: n_spatial_points, n_cells, seed })
}

impl Subsample {
    pub fn n_times(&self) -> usize {
        self.time_indices.len()
    }

    /// Cell indices drawn without replacement, sorted.
    pub fn points(&self, epoch: usize, traj: usize, t: usize) -> Vec<usize> {
        if self.n_points == self.n_cells {
            return (0..self.n_cells).collect();
        }
        let mut rng = stream(self.seed, &[TAG_POINTS, epoch as u64, traj as u64, t as u64]);
        let mut v = index::sample(&mut rng, self.n_cells, self.n_points).into_vec();
        v.sort_unstable();
        v
    }
}
