//! LD-EnSF against the full-state score filter and against prediction
//! alone, plus wall-clock timing.

use std::time::Instant;

use crate::ensf::{GaussianLikelihood, ObsMap, ensemble_mean, reverse_sde_sample};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::metrics::{MetricsRecord, TimingRecord, TimingTable};
use crate::ldensf::{FilterConfig, FilterModels, init_ensemble, predict_latent, run_filter, uniform_box};
use crate::ldnet::{LdnetModel, grid_coords, reconstruct_physical, relative_rmse};
use crate::obs_encoder::{EncoderModel, LATENT_NOISE_FLOOR, LatentNoiseModel, ObservationOperator};
use crate::pde::dataset::{Dataset, SimConfig, Split, Subsample};
use crate::pde::kolmogorov::{KfState, SpectralGrid, kf_step};
use crate::pde::shallow_water::{SwState, sw_initial_bump, sw_step};
use crate::rng::derive;
use crate::tensor::Tensor;

const TAG_FILTER: u64 = 0x51;
const TAG_OBS: u64 = 0x52;
const TAG_FULL: u64 = 0x53;

/// The PDE solver as a forward model on field-major physical states.
pub struct FullModel<'a> {
    data: &'a Dataset,
    spectral: Option<SpectralGrid>,
}

impl<'a> FullModel<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        let spectral = match &data.config {
            SimConfig::Kolmogorov(c) => Some(SpectralGrid::new(c.n)),
            SimConfig::ShallowWater(_) => None,
        };
        Self { data, spectral }
    }

    /// State at stored index 0 for physical parameters `params`.
    pub fn initial_state(&self, params: &[f64]) -> Result<Vec<f64>> {
        match &self.data.config {
            SimConfig::ShallowWater(c) => Ok(sw_initial_bump((params[0], params[1]), c)?.to_fields()),
            SimConfig::Kolmogorov(c) => {
                let g = self.spectral.as_ref().expect("spectral grid");
                let mut s = KfState::from_vorticity(g, &self.data.initial_field);
                for k in 0..c.keep_from {
                    s = kf_step(&s, params[0], c, g, k)?;
                }
                Ok(s.to_fields(g))
            }
        }
    }

    /// Advances a physical state by `steps` solver steps.
    pub fn advance(&self, fields: &[f64], params: &[f64], steps: usize) -> Result<Vec<f64>> {
        let n2 = self.data.n_cells();
        if fields.len() != self.data.state_dim() {
            return Err(Error::Dimension(format!("state of length {} for dimension {}", fields.len(), self.data.state_dim())));
        }
        match &self.data.config {
            SimConfig::ShallowWater(c) => {
                let mut s = SwState { n: c.n, eta: fields[..n2].to_vec(), vx: fields[n2..2 * n2].to_vec(), vy: fields[2 * n2..].to_vec() };
                for k in 0..steps {
                    s = sw_step(&s, c, k)?;
                }
                Ok(s.to_fields())
            }
            SimConfig::Kolmogorov(c) => {
                let g = self.spectral.as_ref().expect("spectral grid");
                let mut s = KfState::from_velocity(g, &fields[..n2], &fields[n2..]);
                for k in 0..steps {
                    s = kf_step(&s, params[0], c, g, k)?;
                }
                Ok(s.to_fields(g))
            }
        }
    }
}

/// Per-step output of the full-state filter.
#[derive(Clone, Debug)]
pub struct FullRun {
    pub state_rmse: Vec<f64>,
    pub ms_dynamics: Vec<f64>,
    pub ms_filter: Vec<f64>,
}

/// Score filter on the normalized full state, with the solver as forward
/// model and a gather likelihood at the observed grid points. Member
/// parameters are drawn once and held fixed.
pub fn run_full_ensf(
    data: &Dataset,
    traj: usize,
    view: &Subsample,
    op: &ObservationOperator,
    cfg: &FilterConfig,
) -> Result<FullRun> {
    let model = FullModel::new(data);
    let truth = &data.trajectories[traj];
    let save = data.config.save_every();
    let d_u = data.kind.n_params();
    let params: Vec<Vec<f64>> = {
        let u = init_ensemble(cfg.n_members, 0, d_u, uniform_box(d_u), derive(cfg.seed, &[TAG_FULL]))?;
        (0..u.rows()).map(|r| data.param_norm.denormalize(u.row(r))).collect::<Result<_>>()?
    };
    let first = view.time_indices[0] * save;
    let mut members = params
        .iter()
        .map(|p| model.advance(&model.initial_state(p)?, p, first))
        .collect::<Result<Vec<_>>>()?;

    let idx = op.state_indices();
    let obs_norm: Vec<(f64, f64)> = op
        .fields
        .iter()
        .flat_map(|&f| std::iter::repeat_n(data.field_norm.vars[f].affine(), op.cells.len()))
        .collect();
    let dim = data.state_dim();
    let mut run = FullRun { state_rmse: Vec::new(), ms_dynamics: Vec::new(), ms_filter: Vec::new() };
    let mut prev = view.time_indices[0];
    for (t, &ti) in view.time_indices.iter().enumerate() {
        let t0 = Instant::now();
        if ti > prev {
            for (m, p) in members.iter_mut().zip(&params) {
                *m = model.advance(m, p, (ti - prev) * save)?;
            }
        }
        prev = ti;
        run.ms_dynamics.push(t0.elapsed().as_secs_f64() * 1e3);

        let state = &truth.states[ti];
        let t1 = Instant::now();
        if cfg.assimilate {
            let y = op.observe(state, cfg.rho, cfg.obs_seed, &[traj as u64, t as u64])?;
            let std = op.noise_std(state, cfg.rho)?;
            let (yn, sn): (Vec<f64>, Vec<f64>) = y
                .iter()
                .zip(&std)
                .zip(&obs_norm)
                .map(|((&v, &s), &(scale, offset))| ((v - offset) / scale, (s / scale.abs()).max(LATENT_NOISE_FLOOR)))
                .unzip();
            let lik = GaussianLikelihood::new(yn, sn, ObsMap::Gather(idx.clone()))?;
            let mut prior = Vec::with_capacity(members.len() * dim);
            for m in &members {
                let mut z = m.clone();
                data.field_norm.normalize_blocks(&mut z)?;
                prior.extend(z);
            }
            let prior = Tensor::matrix(members.len(), dim, prior)?;
            let post = reverse_sde_sample(&prior, &lik, &cfg.schedule, derive(cfg.seed, &[TAG_FULL, t as u64 + 1]))?;
            for (r, m) in members.iter_mut().enumerate() {
                m.copy_from_slice(post.row(r));
                data.field_norm.denormalize_blocks(m)?;
            }
        }
        run.ms_filter.push(t1.elapsed().as_secs_f64() * 1e3);

        let mut mean = vec![0.0; dim];
        for m in &members {
            for (a, b) in mean.iter_mut().zip(m) {
                *a += b / members.len() as f64;
            }
        }
        run.state_rmse.push(relative_rmse(&mean, state)?);
    }
    Ok(run)
}

/// Filter seeds for one trajectory; observation noise is shared by every
/// method and noise level.
pub fn filter_config(cfg: &ExperimentConfig, traj: usize, rho: f64, members: usize, assimilate: bool) -> FilterConfig {
    FilterConfig {
        n_members: members,
        rho,
        schedule: cfg.schedule.clone(),
        process_noise: 0.0,
        assimilate,
        seed: derive(cfg.seed, &[TAG_FILTER, traj as u64]),
        obs_seed: derive(cfg.seed, &[TAG_OBS]),
        state_metrics: true,
    }
}

/// The first `cfg.eval_trajectories` trajectories of the evaluation split.
pub fn eval_trajectories(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<usize>> {
    let ev: Vec<usize> = data.indices(Split::Evaluation).into_iter().take(cfg.eval_trajectories).collect();
    if ev.is_empty() {
        return Err(Error::Config("the evaluation split is empty".into()));
    }
    Ok(ev)
}

/// Trained models plus the latent noise model of each noise level.
pub struct Trained<'a> {
    pub ldnet: &'a LdnetModel,
    pub encoder: &'a EncoderModel,
    pub noise: &'a [LatentNoiseModel],
}

impl Trained<'_> {
    fn noise_for(&self, rho: f64) -> Result<&LatentNoiseModel> {
        self.noise
            .iter()
            .find(|m| m.rho == rho)
            .ok_or_else(|| Error::Config(format!("no latent noise model for noise level {rho}")))
    }
}

/// Relative errors per (method, noise level, step), averaged over the
/// evaluation trajectories.
pub fn compare_methods(cfg: &ExperimentConfig, data: &Dataset, view: &Subsample, models: &Trained<'_>) -> Result<Vec<MetricsRecord>> {
    let trajs = eval_trajectories(cfg, data)?;
    let op = &models.encoder.op;
    let n_t = view.n_times();
    let latent_dim = models.ldnet.d_s + models.ldnet.d_u;
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &rho in &cfg.noise_levels {
            let mut sums = vec![[0.0; 3]; n_t];
            for &j in &trajs {
                match method {
                    Method::LdEnsf | Method::NoAssimilation => {
                        let fm = FilterModels { ldnet: models.ldnet, encoder: models.encoder, noise: models.noise_for(rho)? };
                        let fc = filter_config(cfg, j, rho, cfg.n_members, method == Method::LdEnsf);
                        let run = run_filter(data, j, view, fm, op, &fc)?;
                        for (s, m) in sums.iter_mut().zip(&run.metrics) {
                            s[0] += m.latent_rmse;
                            s[1] += m.param_rmse;
                            s[2] += m.state_rmse.unwrap_or(f64::NAN);
                        }
                    }
                    Method::Ensf => {
                        let run = run_full_ensf(data, j, view, op, &filter_config(cfg, j, rho, cfg.n_members, true))?;
                        for (s, r) in sums.iter_mut().zip(&run.state_rmse) {
                            s[2] += r;
                        }
                    }
                }
            }
            let k = trajs.len() as f64;
            for (step, s) in sums.iter().enumerate() {
                let latent = method != Method::Ensf;
                out.push(MetricsRecord {
                    method,
                    noise: rho,
                    step,
                    latent_rmse: latent.then(|| s[0] / k),
                    param_rmse: latent.then(|| s[1] / k),
                    state_rmse: Some(s[2] / k),
                    dim: if latent { latent_dim } else { data.state_dim() },
                });
            }
        }
    }
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Median wall time in milliseconds of one forecast between retained
/// times for `members` members: `(latent, full solver)`.
pub fn measure_evolution(data: &Dataset, ldnet: &LdnetModel, view: &Subsample, members: usize, repeats: usize, seed: u64) -> Result<(f64, f64)> {
    let model = FullModel::new(data);
    let d_u = ldnet.d_u;
    let ens = init_ensemble(members, ldnet.d_s, d_u, uniform_box(d_u), seed)?;
    let params: Vec<Vec<f64>> = (0..members).map(|r| data.param_norm.denormalize(&ens.row(r)[ldnet.d_s..])).collect::<Result<_>>()?;
    let states: Vec<Vec<f64>> = params.iter().map(|p| model.initial_state(p)).collect::<Result<_>>()?;
    let steps = match view.time_indices.as_slice() {
        [a, b, ..] => (b - a) * data.config.save_every(),
        _ => data.config.save_every(),
    };
    let mut latent = Vec::with_capacity(repeats);
    let mut full = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        std::hint::black_box(predict_latent(&ens, ldnet)?);
        latent.push(t0.elapsed().as_secs_f64() * 1e3);
        let t1 = Instant::now();
        for (s, p) in states.iter().zip(&params) {
            std::hint::black_box(model.advance(s, p, steps)?);
        }
        full.push(t1.elapsed().as_secs_f64() * 1e3);
    }
    Ok((median(latent), median(full)))
}

/// Summed `T_d`, `T_f`, `T_r` over one evaluation trajectory at
/// `cfg.timing_members` members, median of `cfg.timing_repeats` runs.
pub fn timing_table(cfg: &ExperimentConfig, data: &Dataset, view: &Subsample, models: &Trained<'_>) -> Result<TimingTable> {
    let j = eval_trajectories(cfg, data)?[0];
    let rho = if cfg.noise_levels.contains(&0.1) { 0.1 } else { cfg.noise_levels[0] };
    let op = &models.encoder.op;
    let coords = grid_coords(data);
    let mut table = Vec::new();
    for &method in &cfg.methods {
        let mut runs = Vec::with_capacity(cfg.timing_repeats);
        for _ in 0..cfg.timing_repeats {
            let mut fc = filter_config(cfg, j, rho, cfg.timing_members, method != Method::NoAssimilation);
            fc.state_metrics = false;
            let (t_d, t_f, t_r, dim) = match method {
                Method::Ensf => {
                    let r = run_full_ensf(data, j, view, op, &fc)?;
                    (r.ms_dynamics.iter().sum(), r.ms_filter.iter().sum(), 0.0, data.state_dim())
                }
                _ => {
                    let fm = FilterModels { ldnet: models.ldnet, encoder: models.encoder, noise: models.noise_for(rho)? };
                    let run = run_filter(data, j, view, fm, op, &fc)?;
                    let t0 = Instant::now();
                    let last = ensemble_mean(run.ensembles.last().expect("non-empty run"));
                    std::hint::black_box(reconstruct_physical(models.ldnet, data, &last[..models.ldnet.d_s], &coords)?);
                    let t_r = t0.elapsed().as_secs_f64() * 1e3;
                    let t_d = run.timings.iter().map(|t| t.ms_predict).sum();
                    let t_f = run.timings.iter().map(|t| t.ms_encode + t.ms_update).sum();
                    (t_d, t_f, t_r, fm.width())
                }
            };
            runs.push((t_d, t_f, t_r, dim));
        }
        table.push(TimingRecord {
            method,
            members: cfg.timing_members,
            t_d: median(runs.iter().map(|r| r.0).collect()),
            t_f: median(runs.iter().map(|r| r.1).collect()),
            t_r: median(runs.iter().map(|r| r.2).collect()),
            dim: runs[0].3,
            steps: view.n_times(),
        });
    }
    Ok(table)
}
