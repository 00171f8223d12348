//! Ensemble score filtering of the augmented latent state `κ = (s, u)`.
//!
//! The ensemble is a `members × (d_s + d_u)` tensor. Each cycle advances
//! `s` through the LDNet dynamics, encodes the new observation into
//! `φ = (ŝ, û)`, and samples the posterior under an identity latent
//! observation map with the diagonal latent noise model.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ensf::{DiffusionSchedule, GaussianLikelihood, ObsMap, ensemble_mean, ensf_step};
use crate::error::{Error, Result};
use crate::ldnet::{LdnetModel, grid_coords, interpolate_latent, reconstruct_physical, relative_rmse};
use crate::obs_encoder::{EncoderModel, EncoderStream, LatentNoiseModel, ObservationOperator};
use crate::pde::dataset::{Dataset, Subsample};
use crate::rng::{derive, stream};
use crate::tensor::Tensor;

const TAG_ENSEMBLE: u64 = 0x41;
const TAG_UPDATE: u64 = 0x42;
const TAG_PROCESS: u64 = 0x43;

/// Trained pieces the filter needs.
#[derive(Clone, Copy, Debug)]
pub struct FilterModels<'a> {
    pub ldnet: &'a LdnetModel,
    pub encoder: &'a EncoderModel,
    pub noise: &'a LatentNoiseModel,
}

impl FilterModels<'_> {
    pub fn width(&self) -> usize {
        self.ldnet.d_s + self.ldnet.d_u
    }

    fn check(&self) -> Result<()> {
        let e = self.encoder;
        if e.d_s != self.ldnet.d_s || e.d_u != self.ldnet.d_u || self.noise.std.len() != self.width() {
            return Err(Error::Dimension(format!(
                "encoder ({}, {}) and noise width {} do not match LDNet ({}, {})",
                e.d_s,
                e.d_u,
                self.noise.std.len(),
                self.ldnet.d_s,
                self.ldnet.d_u
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub n_members: usize,
    /// Observation noise level relative to the field RMS.
    pub rho: f64,
    pub schedule: DiffusionSchedule,
    /// Std of additive Gaussian noise on `s` after each prediction.
    pub process_noise: f64,
    /// When false only the prediction runs.
    pub assimilate: bool,
    pub seed: u64,
    /// Seed of the observation noise; independent of `rho`.
    pub obs_seed: u64,
    /// Reconstruct the full state at every step for the state metrics.
    pub state_metrics: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_members: 20,
            rho: 0.1,
            schedule: DiffusionSchedule::default(),
            process_noise: 0.0,
            assimilate: true,
            seed: 0,
            obs_seed: 1,
            state_metrics: true,
        }
    }
}

/// Uniform draws on `[-1, 1]^d`, the normalized parameter box.
pub fn uniform_box(d: usize) -> impl FnMut(&mut ChaCha8Rng) -> Vec<f64> {
    move |rng| (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Members `[0 … 0 | u]` with `u` from `sampler`.
pub fn init_ensemble(
    n_members: usize,
    d_s: usize,
    d_u: usize,
    mut sampler: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    seed: u64,
) -> Result<Tensor> {
    if n_members < 2 {
        return Err(Error::Config(format!("an ensemble needs at least 2 members, got {n_members}")));
    }
    let mut rng = stream(seed, &[TAG_ENSEMBLE]);
    let mut data = Vec::with_capacity(n_members * (d_s + d_u));
    for _ in 0..n_members {
        let u = sampler(&mut rng);
        if u.len() != d_u {
            return Err(Error::Dimension(format!("sampler returned {} parameters for d_u = {d_u}", u.len())));
        }
        data.extend(std::iter::repeat_n(0.0, d_s));
        data.extend(u);
    }
    Tensor::matrix(n_members, d_s + d_u, data)
}

/// One latent Euler step per member; the `u` columns are copied through.
pub fn predict_latent(ensemble: &Tensor, ldnet: &LdnetModel) -> Result<Tensor> {
    let (d_s, d_u) = (ldnet.d_s, ldnet.d_u);
    if ensemble.cols() != d_s + d_u {
        return Err(Error::Dimension(format!("ensemble width {} for d_s + d_u = {}", ensemble.cols(), d_s + d_u)));
    }
    let n = ensemble.rows();
    let (mut s, mut u) = (Vec::with_capacity(n * d_s), Vec::with_capacity(n * d_u));
    for r in 0..n {
        let row = ensemble.row(r);
        s.extend_from_slice(&row[..d_s]);
        u.extend_from_slice(&row[d_s..]);
    }
    let next = ldnet
        .step(&Tensor::matrix(n, d_s, s)?, &Tensor::matrix(n, d_u, u)?)?;
    if !next.is_finite() {
        return Err(Error::Rollout { step: 0 });
    }
    let mut out = ensemble.clone();
    for r in 0..n {
        out.row_mut(r)[..d_s].copy_from_slice(next.row(r));
    }
    Ok(out)
}

/// Latent likelihood `N(φ, diag(σ²))` under the identity map.
pub fn latent_likelihood(phi: Vec<f64>, noise: &LatentNoiseModel) -> Result<GaussianLikelihood> {
    GaussianLikelihood::new(phi, noise.std.clone(), ObsMap::Identity)
}

/// Result of one assimilation cycle.
#[derive(Clone, Debug)]
pub struct CycleOutput {
    pub ensemble: Tensor,
    pub phi: Vec<f64>,
    pub ms_encode: f64,
    pub ms_predict: f64,
    pub ms_update: f64,
}

/// Encodes `y`, predicts, and (when `cfg.assimilate`) samples the latent
/// posterior. `step` keys the random streams.
pub fn assimilate_step(
    ensemble: &Tensor,
    y: &[f64],
    encoder_state: &mut EncoderStream,
    models: FilterModels<'_>,
    cfg: &FilterConfig,
    step: usize,
) -> Result<CycleOutput> {
    models.check()?;
    let te = Instant::now();
    let phi = models.encoder.push(encoder_state, y)?;
    let ms_encode = te.elapsed().as_secs_f64() * 1e3;
    let t0 = Instant::now();
    let mut predicted = predict_latent(ensemble, models.ldnet)?;
    if cfg.process_noise > 0.0 {
        let mut rng = stream(cfg.seed, &[TAG_PROCESS, step as u64]);
        let d_s = models.ldnet.d_s;
        for r in 0..predicted.rows() {
            for v in &mut predicted.row_mut(r)[..d_s] {
                let z: f64 = rng.sample(StandardNormal);
                *v += cfg.process_noise * z;
            }
        }
    }
    let ms_predict = t0.elapsed().as_secs_f64() * 1e3;
    let t1 = Instant::now();
    let ensemble = if cfg.assimilate {
        let lik = latent_likelihood(phi.clone(), models.noise)?;
        ensf_step(&predicted, |e| Ok(e.clone()), &lik, &cfg.schedule, derive(cfg.seed, &[TAG_UPDATE, step as u64]))?
    } else {
        predicted
    };
    let ms_update = t1.elapsed().as_secs_f64() * 1e3;
    Ok(CycleOutput { ensemble, phi, ms_encode, ms_predict, ms_update })
}

/// Relative errors after one cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    /// Posterior mean `s` against the LDNet rollout at the true parameters.
    pub latent_rmse: f64,
    /// Posterior mean `u` against the true parameters, physical units.
    pub param_rmse: f64,
    /// Reconstruction of the latent mean against the true field.
    pub state_rmse: Option<f64>,
    /// Reconstruction of member 0 against the true field.
    pub member_state_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTiming {
    pub ms_encode: f64,
    pub ms_predict: f64,
    pub ms_update: f64,
}

/// Everything recorded by [`run_filter`].
#[derive(Clone, Debug)]
pub struct FilterRun {
    pub trajectory: usize,
    pub config: FilterConfig,
    /// Posterior ensemble after each cycle.
    pub ensembles: Vec<Tensor>,
    /// Encoder output per cycle.
    pub phis: Vec<Vec<f64>>,
    pub encoder_state: EncoderStream,
    pub metrics: Vec<StepMetrics>,
    pub timings: Vec<StepTiming>,
    /// Dataset time index of each cycle.
    pub time_indices: Vec<usize>,
}

impl FilterRun {
    pub fn mean_latents(&self) -> Vec<Vec<f64>> {
        self.ensembles.iter().map(ensemble_mean).collect()
    }

    pub fn final_metrics(&self) -> &StepMetrics {
        self.metrics.last().expect("a filter run has at least one step")
    }
}

/// Assimilates noisy observations of trajectory `traj` at every retained
/// time of `view`.
pub fn run_filter(
    data: &Dataset,
    traj: usize,
    view: &Subsample,
    models: FilterModels<'_>,
    op: &ObservationOperator,
    cfg: &FilterConfig,
) -> Result<FilterRun> {
    models.check()?;
    if *op != models.encoder.op {
        return Err(Error::Config("observation operator differs from the encoder's".into()));
    }
    let truth = data
        .trajectories
        .get(traj)
        .ok_or_else(|| Error::Config(format!("trajectory {traj} not in dataset")))?;
    let (d_s, d_u) = (models.ldnet.d_s, models.ldnet.d_u);
    let n_t = view.n_times();
    let u_true = data.normalized_params(traj)?;
    let reference = models.ldnet.latent_rollout(&vec![u_true; n_t], n_t)?;
    let coords = if cfg.state_metrics { grid_coords(data) } else { Vec::new() };

    let mut ensemble = init_ensemble(cfg.n_members, d_s, d_u, uniform_box(d_u), cfg.seed)?;
    let mut enc = models.encoder.start();
    let mut run = FilterRun {
        trajectory: traj,
        config: cfg.clone(),
        ensembles: Vec::with_capacity(n_t),
        phis: Vec::with_capacity(n_t),
        encoder_state: enc.clone(),
        metrics: Vec::with_capacity(n_t),
        timings: Vec::with_capacity(n_t),
        time_indices: view.time_indices.clone(),
    };
    for (t, &ti) in view.time_indices.iter().enumerate() {
        let state = &truth.states[ti];
        let y = op.observe(state, cfg.rho, cfg.obs_seed, &[traj as u64, t as u64])?;
        let out = assimilate_step(&ensemble, &y, &mut enc, models, cfg, t)?;
        ensemble = out.ensemble;
        let mean = ensemble_mean(&ensemble);
        let latent_rmse = relative_rmse(&mean[..d_s], &reference[t])?;
        let u_phys = data.param_norm.denormalize(&mean[d_s..])?;
        let param_rmse = relative_rmse(&u_phys, &truth.params)?;
        let (state_rmse, member_state_rmse) = if cfg.state_metrics {
            let a = relative_rmse(&reconstruct_physical(models.ldnet, data, &mean[..d_s], &coords)?, state)?;
            let b = relative_rmse(&reconstruct_physical(models.ldnet, data, &ensemble.row(0)[..d_s], &coords)?, state)?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        run.metrics.push(StepMetrics { step: t, latent_rmse, param_rmse, state_rmse, member_state_rmse });
        run.timings.push(StepTiming { ms_encode: out.ms_encode, ms_predict: out.ms_predict, ms_update: out.ms_update });
        run.phis.push(out.phi);
        run.ensembles.push(ensemble.clone());
    }
    run.encoder_state = enc;
    Ok(run)
}

/// Which latent to reconstruct.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Summary {
    /// Reconstruction of the ensemble-mean latent.
    Mean,
    Member(usize),
}

/// Physical fields (field-major, one block per field over `points`) at a
/// possibly fractional cycle index.
pub fn reconstruct_posterior(
    run: &FilterRun,
    ldnet: &LdnetModel,
    data: &Dataset,
    which: Summary,
    time: f64,
    points: &[(f64, f64)],
) -> Result<Vec<f64>> {
    let d_s = ldnet.d_s;
    let seq: Vec<Vec<f64>> = match which {
        Summary::Mean => run.mean_latents().into_iter().map(|m| m[..d_s].to_vec()).collect(),
        Summary::Member(i) => {
            if run.ensembles.first().is_none_or(|e| i >= e.rows()) {
                return Err(Error::Domain(format!("member {i} not in the ensemble")));
            }
            run.ensembles.iter().map(|e| e.row(i)[..d_s].to_vec()).collect()
        }
    };
    let s = interpolate_latent(&seq, time)?;
    reconstruct_physical(ldnet, data, &s, points)
}
