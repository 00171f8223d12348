//! Latent dynamics network.
//!
//! The dynamics net `F` outputs the time derivative of the latent state,
//! which is rolled out by explicit Euler from `s₋₁ = 0`:
//!
//! ```text
//! s_t = s_{t−1} + Δt · F(s_{t−1}, u_{t−1}),    t = 0, 1, …
//! x̃(t, ξ) = R(s_t, ξ)
//! ```
//!
//! `R` is queried point by point, so the full state can be evaluated at any
//! spatial location. All inputs and outputs are in normalized units.

use std::rc::Rc;

use rand::seq::SliceRandom;

use crate::autodiff::{Tape, concat_cols};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::optim::{AdamConfig, LrSchedule, OptimizerState};
use crate::pde::dataset::{Dataset, Split, Subsample};
use crate::rng::{derive, stream};
use crate::tensor::Tensor;

const TAG_INIT_F: u64 = 0x21;
const TAG_INIT_R: u64 = 0x22;
const TAG_SHUFFLE: u64 = 0x23;

/// Network shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct LdnetArch {
    pub d_s: usize,
    pub d_u: usize,
    pub n_fields: usize,
    pub dynamics_layers: usize,
    pub dynamics_width: usize,
    pub recon_layers: usize,
    pub recon_width: usize,
    /// Normalized latent step.
    pub dt: f64,
}

impl LdnetArch {
    /// Shallow-water architecture: `F` 8 × 50, `R` 7 × 180, `d_s = 10`.
    pub fn paper_sw() -> Self {
        Self { d_s: 10, d_u: 2, n_fields: 3, dynamics_layers: 8, dynamics_width: 50, recon_layers: 7, recon_width: 180, dt: 0.036 }
    }

    /// Kolmogorov architecture: `F` 9 × 200, `R` 15 × 500, `d_s = 9`.
    pub fn paper_kf() -> Self {
        Self { d_s: 9, d_u: 1, n_fields: 2, dynamics_layers: 9, dynamics_width: 200, recon_layers: 15, recon_width: 500, dt: 0.04 }
    }

    fn widths(input: usize, layers: usize, width: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(width, layers));
        w.push(output);
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdnetModel {
    pub dynamics: MlpParams,
    pub reconstruction: MlpParams,
    pub d_s: usize,
    pub d_u: usize,
    pub n_fields: usize,
    pub dt: f64,
}

impl LdnetModel {
    pub fn new(arch: &LdnetArch, seed: u64) -> Result<Self> {
        if !(arch.dt > 0.0) {
            return Err(Error::Config(format!("latent step must be positive, got {}", arch.dt)));
        }
        let fw = LdnetArch::widths(arch.d_s + arch.d_u, arch.dynamics_layers, arch.dynamics_width, arch.d_s);
        let rw = LdnetArch::widths(arch.d_s + 2, arch.recon_layers, arch.recon_width, arch.n_fields);
        Ok(Self {
            dynamics: MlpParams::new(&fw, derive(seed, &[TAG_INIT_F]))?,
            reconstruction: MlpParams::new(&rw, derive(seed, &[TAG_INIT_R]))?,
            d_s: arch.d_s,
            d_u: arch.d_u,
            n_fields: arch.n_fields,
            dt: arch.dt,
        })
    }

    /// Assembles a model from given networks, checking their widths.
    pub fn from_parts(dynamics: MlpParams, reconstruction: MlpParams, d_u: usize, dt: f64) -> Result<Self> {
        let d_s = dynamics.output_width();
        if dynamics.input_width() != d_s + d_u {
            return Err(Error::Dimension(format!(
                "dynamics input {} != d_s + d_u = {}",
                dynamics.input_width(),
                d_s + d_u
            )));
        }
        if reconstruction.input_width() != d_s + 2 {
            return Err(Error::Dimension(format!("reconstruction input {} != d_s + 2", reconstruction.input_width())));
        }
        if !(dt > 0.0) {
            return Err(Error::Config("latent step must be positive".into()));
        }
        let n_fields = reconstruction.output_width();
        Ok(Self { dynamics, reconstruction, d_s, d_u, n_fields, dt })
    }

    /// One Euler step for a batch of latents `s` (`B × d_s`) with
    /// parameters `u` (`B × d_u`).
    pub fn step(&self, s: &Tensor, u: &Tensor) -> Result<Tensor> {
        if s.cols() != self.d_s || u.cols() != self.d_u || s.rows() != u.rows() {
            return Err(Error::Dimension(format!(
                "latent step: s {:?}, u {:?} for d_s = {}, d_u = {}",
                s.shape(),
                u.shape(),
                self.d_s,
                self.d_u
            )));
        }
        let ds = self.dynamics.forward(&concat_cols(&[s, u])?)?;
        let mut next = s.clone();
        for (a, d) in next.data_mut().iter_mut().zip(ds.data()) {
            *a += self.dt * d;
        }
        Ok(next)
    }

    /// Rollout with per-step parameters: `u_seq[t]` drives the step that
    /// produces `s_t`. Returns `s₀ … s_{n−1}`.
    pub fn latent_rollout(&self, u_seq: &[Vec<f64>], n_steps: usize) -> Result<Vec<Vec<f64>>> {
        if n_steps == 0 {
            return Err(Error::Config("rollout needs at least one step".into()));
        }
        if u_seq.len() < n_steps {
            return Err(Error::Dimension(format!("{} parameter vectors for {n_steps} steps", u_seq.len())));
        }
        let mut s = Tensor::zeros(&[1, self.d_s]);
        let mut out = Vec::with_capacity(n_steps);
        for (t, u) in u_seq.iter().take(n_steps).enumerate() {
            s = self.step(&s, &Tensor::matrix(1, self.d_u, u.clone())?)?;
            if !s.is_finite() {
                return Err(Error::Rollout { step: t });
            }
            out.push(s.data().to_vec());
        }
        Ok(out)
    }

    /// Rollout of a batch with constant parameters (`B × d_u`); entry `t`
    /// is `B × d_s`.
    pub fn rollout_batch(&self, u: &Tensor, n_steps: usize) -> Result<Vec<Tensor>> {
        let mut s = Tensor::zeros(&[u.rows(), self.d_s]);
        let mut out = Vec::with_capacity(n_steps);
        for t in 0..n_steps {
            s = self.step(&s, u)?;
            if !s.is_finite() {
                return Err(Error::Rollout { step: t });
            }
            out.push(s.clone());
        }
        Ok(out)
    }

    /// Field values (`points × n_fields`) at normalized coordinates.
    pub fn reconstruct_at(&self, s: &[f64], points: &[(f64, f64)]) -> Result<Tensor> {
        if s.len() != self.d_s {
            return Err(Error::Dimension(format!("latent of width {} for d_s = {}", s.len(), self.d_s)));
        }
        for &(a, b) in points {
            if !(a.abs() <= 1.0 && b.abs() <= 1.0) {
                return Err(Error::Domain(format!("query point ({a}, {b}) outside [-1, 1]²")));
            }
        }
        let mut input = Vec::with_capacity(points.len() * (self.d_s + 2));
        for &(a, b) in points {
            input.extend_from_slice(s);
            input.push(a);
            input.push(b);
        }
        self.reconstruction.forward(&Tensor::matrix(points.len(), self.d_s + 2, input)?)
    }

    /// Full normalized state, field-major `[field₀ | field₁ | …]`, on the
    /// dataset grid.
    pub fn reconstruct_grid(&self, s: &[f64], coords: &[(f64, f64)]) -> Result<Vec<f64>> {
        let out = self.reconstruct_at(s, coords)?;
        Ok(field_major(&out, self.n_fields))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new()
            .with_meta("model", "ldnet")
            .with_meta("d_s", self.d_s)
            .with_meta("d_u", self.d_u)
            .with_meta("n_fields", self.n_fields)
            .with_meta("dt", self.dt)
            .with_meta("dynamics_layers", self.dynamics.layers.len())
            .with_meta("recon_layers", self.reconstruction.layers.len());
        for (name, t) in self.dynamics.named_params("dynamics").into_iter().chain(self.reconstruction.named_params("reconstruction")) {
            ck.push(name, t);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_str("model")? != "ldnet" {
            return Err(Error::Format("checkpoint does not hold an LDNet".into()));
        }
        let d_u: usize = ck.meta_parse("d_u")?;
        let dt: f64 = ck.meta_parse("dt")?;
        let dynamics = mlp_from_checkpoint(ck, "dynamics", ck.meta_parse("dynamics_layers")?)?;
        let reconstruction = mlp_from_checkpoint(ck, "reconstruction", ck.meta_parse("recon_layers")?)?;
        Self::from_parts(dynamics, reconstruction, d_u, dt)
    }
}

pub(crate) fn mlp_from_checkpoint(ck: &Checkpoint, prefix: &str, n_layers: usize) -> Result<MlpParams> {
    let layers = (0..n_layers)
        .map(|l| {
            Ok(crate::nn::Dense {
                weight: ck.get(&format!("{prefix}.{l}.weight"))?.clone(),
                bias: ck.get(&format!("{prefix}.{l}.bias"))?.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MlpParams::from_layers(layers)
}

fn field_major(rows: &Tensor, n_fields: usize) -> Vec<f64> {
    let n = rows.rows();
    let mut out = vec![0.0; n * n_fields];
    for p in 0..n {
        for (f, &v) in rows.row(p).iter().enumerate() {
            out[f * n + p] = v;
        }
    }
    out
}

/// Piecewise-linear interpolation of a latent sequence at fractional index.
pub fn interpolate_latent(states: &[Vec<f64>], t: f64) -> Result<Vec<f64>> {
    let last = states.len().checked_sub(1).ok_or_else(|| Error::Domain("empty latent sequence".into()))?;
    if !(0.0..=last as f64).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, {last}]")));
    }
    let i = (t.floor() as usize).min(last);
    let w = t - i as f64;
    if w == 0.0 {
        return Ok(states[i].clone());
    }
    Ok(states[i].iter().zip(&states[i + 1]).map(|(a, b)| a + w * (b - a)).collect())
}

/// Optimization settings for either training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct LdnetTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    /// Stage-2 epochs; 0 skips stage 2.
    pub stage2_epochs: usize,
    /// Validation is checked every this many stage-2 epochs.
    pub stage2_eval_every: usize,
    pub seed: u64,
}

impl LdnetTrainConfig {
    pub fn paper_sw() -> Self {
        Self {
            epochs: 2000,
            batch_size: 2,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            schedule: LrSchedule::StepLr { gamma: 0.6, step_size: 200 },
            stage2_epochs: 2000,
            stage2_eval_every: 20,
            seed: 0,
        }
    }

    pub fn paper_kf() -> Self {
        Self { batch_size: 6, schedule: LrSchedule::StepLr { gamma: 0.7, step_size: 200 }, ..Self::paper_sw() }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    /// `(epoch, validation relative RMSE)` checkpoints.
    pub validation: Vec<(usize, f64)>,
}

/// Normalized training tensors for one trajectory.
struct Sample {
    u: Vec<f64>,
}

fn samples(data: &Dataset, idx: &[usize]) -> Result<Vec<Sample>> {
    idx.iter().map(|&j| Ok(Sample { u: data.normalized_params(j)? })).collect()
}

/// Builds the stacked reconstruction input and target for a batch.
///
/// Rows are ordered by (time, batch member, point). The input holds the
/// latent row index for each point (into the `T·B × d_s` latent stack) and
/// the point coordinates; the target holds normalized field values.
fn batch_points(
    data: &Dataset,
    view: &Subsample,
    batch: &[usize],
    epoch: usize,
) -> Result<(Vec<usize>, Tensor, Tensor)> {
    let nf = data.n_fields();
    let cells = data.n_cells();
    let rows = view.n_times() * batch.len() * view.n_points;
    let mut latent_row = Vec::with_capacity(rows);
    let mut xi = Vec::with_capacity(rows * 2);
    let mut target = Vec::with_capacity(rows * nf);
    for (k, &ti) in view.time_indices.iter().enumerate() {
        for (b, &j) in batch.iter().enumerate() {
            let state = &data.trajectories[j].states[ti];
            for cell in view.points(epoch, j, k) {
                latent_row.push(k * batch.len() + b);
                let (a, c) = data.normalized_coord(cell);
                xi.push(a);
                xi.push(c);
                for f in 0..nf {
                    target.push(data.field_norm.vars[f].normalize(state[f * cells + cell]));
                }
            }
        }
    }
    Ok((latent_row, Tensor::matrix(rows, 2, xi)?, Tensor::matrix(rows, nf, target)?))
}

fn shuffled(ids: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut v = ids.to_vec();
    v.shuffle(&mut stream(seed, &[TAG_SHUFFLE, epoch as u64]));
    v
}

/// Stage 1: joint training of `F` and `R` through the full rollout.
pub fn train_ldnet(model: &mut LdnetModel, data: &Dataset, view: &Subsample, cfg: &LdnetTrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    check_compat(model, data)?;
    let train = data.indices(Split::Train);
    let all = samples(data, &(0..data.trajectories.len()).collect::<Vec<_>>())?;
    let names: Vec<String> = model
        .dynamics
        .named_params("dynamics")
        .into_iter()
        .chain(model.reconstruction.named_params("reconstruction"))
        .map(|(n, _)| n)
        .collect();
    let mut opt = OptimizerState::new(
        cfg.adam.clone(),
        cfg.schedule.clone(),
        model.dynamics.layers.iter().chain(&model.reconstruction.layers).flat_map(|l| [&l.weight, &l.bias]),
    );
    let n_times = view.n_times();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let order = shuffled(&train, cfg.seed, epoch);
        let mut total = 0.0;
        let mut count = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (latent_row, xi, target) = batch_points(data, view, batch, epoch)?;
            let mut tape = Tape::new();
            let fv = model.dynamics.bind(&mut tape);
            let rv = model.reconstruction.bind(&mut tape);
            let u_data: Vec<f64> = batch.iter().flat_map(|&j| all[j].u.iter().copied()).collect();
            let u = tape.constant(Tensor::matrix(batch.len(), model.d_u, u_data)?);
            let mut s = tape.constant(Tensor::zeros(&[batch.len(), model.d_s]));
            let mut stack = Vec::with_capacity(n_times);
            for _ in 0..n_times {
                let inp = tape.concat_cols(&[s, u])?;
                let ds = fv.forward(&mut tape, inp)?;
                s = tape.add_scaled(s, ds, model.dt)?;
                stack.push(s);
            }
            let latents = tape.concat_rows(&stack)?;
            let gathered = tape.gather_rows(latents, Rc::from(latent_row))?;
            let xi = tape.constant(xi);
            let inp = tape.concat_cols(&[gathered, xi])?;
            let out = rv.forward(&mut tape, inp)?;
            let loss = tape.mse(out, Rc::new(target))?;
            let lv = tape.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = fv.vars().into_iter().chain(rv.vars()).map(|v| grads.take(v)).collect();
            let mut params: Vec<&mut Tensor> = model.dynamics.params_mut();
            params.extend(model.reconstruction.params_mut());
            opt.adam_step(epoch, &names, &mut params, &g)?;
            total += lv;
            count += 1;
        }
        log.losses.push(total / count.max(1) as f64);
    }
    Ok(log)
}

/// Stage 2: `F` frozen, `R` retrained on the fixed rollouts. Keeps the
/// reconstruction parameters with the best validation RMSE, starting from
/// the stage-1 model itself.
pub fn retrain_reconstruction(
    model: &mut LdnetModel,
    data: &Dataset,
    view: &Subsample,
    cfg: &LdnetTrainConfig,
) -> Result<TrainLog> {
    check_compat(model, data)?;
    let train = data.indices(Split::Train);
    let val = data.indices(Split::Validation);
    let n_times = view.n_times();
    let mut rollouts: Vec<Option<Tensor>> = vec![None; data.trajectories.len()];
    for &j in &train {
        let u = Tensor::matrix(1, model.d_u, data.normalized_params(j)?)?;
        let seq = model.rollout_batch(&u, n_times)?;
        rollouts[j] = Some(Tensor::matrix(n_times, model.d_s, seq.iter().flat_map(|t| t.data().to_vec()).collect())?);
    }
    let names: Vec<String> = model.reconstruction.named_params("reconstruction").into_iter().map(|(n, _)| n).collect();
    let mut opt = OptimizerState::new(
        cfg.adam.clone(),
        cfg.schedule.clone(),
        model.reconstruction.layers.iter().flat_map(|l| [&l.weight, &l.bias]),
    );
    let mut log = TrainLog::default();
    let mut best = (validation_rmse(model, data, &val, view)?, model.reconstruction.clone());
    log.validation.push((0, best.0));
    let every = cfg.stage2_eval_every.max(1);
    for epoch in 0..cfg.stage2_epochs {
        let order = shuffled(&train, derive(cfg.seed, &[2]), epoch);
        let (mut total, mut count) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let (latent_row, xi, target) = batch_points(data, view, batch, epoch + cfg.epochs)?;
            // latent stack ordered (time, batch member) to match `latent_row`
            let mut stack = Vec::with_capacity(n_times * batch.len() * model.d_s);
            for k in 0..n_times {
                for &j in batch {
                    stack.extend_from_slice(rollouts[j].as_ref().expect("train rollout").row(k));
                }
            }
            let mut tape = Tape::new();
            let rv = model.reconstruction.bind(&mut tape);
            let latents = tape.constant(Tensor::matrix(n_times * batch.len(), model.d_s, stack)?);
            let gathered = tape.gather_rows(latents, Rc::from(latent_row))?;
            let xi = tape.constant(xi);
            let inp = tape.concat_cols(&[gathered, xi])?;
            let out = rv.forward(&mut tape, inp)?;
            let loss = tape.mse(out, Rc::new(target))?;
            let lv = tape.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::Training(format!("non-finite loss at stage-2 epoch {epoch}")));
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = rv.vars().into_iter().map(|v| grads.take(v)).collect();
            opt.adam_step(epoch, &names, &mut model.reconstruction.params_mut(), &g)?;
            total += lv;
            count += 1;
        }
        log.losses.push(total / count.max(1) as f64);
        if (epoch + 1) % every == 0 || epoch + 1 == cfg.stage2_epochs {
            let v = validation_rmse(model, data, &val, view)?;
            log.validation.push((epoch + 1, v));
            if v < best.0 {
                best = (v, model.reconstruction.clone());
            }
        }
    }
    model.reconstruction = best.1;
    Ok(log)
}

fn check_compat(model: &LdnetModel, data: &Dataset) -> Result<()> {
    if model.n_fields != data.n_fields() || model.d_u != data.kind.n_params() {
        return Err(Error::Dimension(format!(
            "model has {} fields and {} parameters, dataset {} and {}",
            model.n_fields,
            model.d_u,
            data.n_fields(),
            data.kind.n_params()
        )));
    }
    Ok(())
}

/// Normalized coordinates of every grid cell in storage order.
pub fn grid_coords(data: &Dataset) -> Vec<(f64, f64)> {
    (0..data.n_cells()).map(|c| data.normalized_coord(c)).collect()
}

/// Physical full state reconstructed from a latent.
pub fn reconstruct_physical(model: &LdnetModel, data: &Dataset, s: &[f64], coords: &[(f64, f64)]) -> Result<Vec<f64>> {
    let mut x = model.reconstruct_grid(s, coords)?;
    data.field_norm.denormalize_blocks(&mut x)?;
    Ok(x)
}

/// `‖pred − truth‖ / ‖truth‖` over all entries.
pub fn relative_rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!("{} predictions for {} truth values", pred.len(), truth.len())));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if den == 0.0 {
        return Err(Error::Metric("relative RMSE against an all-zero truth".into()));
    }
    Ok((num / den).sqrt())
}

/// Per-trajectory mean over retained times of the relative RMSE of the
/// reconstructed rollout, averaged over `trajectories`.
pub fn validation_rmse(model: &LdnetModel, data: &Dataset, trajectories: &[usize], view: &Subsample) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::Metric("no trajectories to evaluate".into()));
    }
    let coords = grid_coords(data);
    let mut total = 0.0;
    for &j in trajectories {
        total += trajectory_rmse(model, data, j, view, &coords)?.iter().sum::<f64>() / view.n_times() as f64;
    }
    Ok(total / trajectories.len() as f64)
}

/// Relative RMSE at each retained time of one trajectory's rollout.
pub fn trajectory_rmse(
    model: &LdnetModel,
    data: &Dataset,
    traj: usize,
    view: &Subsample,
    coords: &[(f64, f64)],
) -> Result<Vec<f64>> {
    let u = data.normalized_params(traj)?;
    let seq = model.latent_rollout(&vec![u; view.n_times()], view.n_times())?;
    seq.iter()
        .zip(&view.time_indices)
        .map(|(s, &ti)| relative_rmse(&reconstruct_physical(model, data, s, coords)?, &data.trajectories[traj].states[ti]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    fn zero_model(d_s: usize, d_u: usize) -> LdnetModel {
        let f = MlpParams::from_layers(vec![Dense::zeros(d_s + d_u, 4), Dense::zeros(4, d_s)]).unwrap();
        let r = MlpParams::from_layers(vec![Dense::zeros(d_s + 2, 4), Dense::zeros(4, 3)]).unwrap();
        LdnetModel::from_parts(f, r, d_u, 0.036).unwrap()
    }

    #[test]
    fn zero_dynamics_keeps_zero_latent() {
        let m = zero_model(3, 2);
        let seq = m.latent_rollout(&vec![vec![0.3, -0.5]; 5], 5).unwrap();
        assert!(seq.iter().flatten().all(|&v| v == 0.0));
        let out = m.reconstruct_at(&seq[4], &[(0.1, 0.2), (-1.0, 1.0)]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_step_is_dt_times_f_at_zero() {
        let arch = LdnetArch { d_s: 3, d_u: 2, n_fields: 3, dynamics_layers: 2, dynamics_width: 8, recon_layers: 1, recon_width: 4, dt: 0.04 };
        let m = LdnetModel::new(&arch, 5).unwrap();
        let u = vec![0.2, -0.7];
        let s0 = m.latent_rollout(&[u.clone()], 1).unwrap();
        let f = m.dynamics.forward(&Tensor::matrix(1, 5, vec![0.0, 0.0, 0.0, 0.2, -0.7]).unwrap()).unwrap();
        for (a, b) in s0[0].iter().zip(f.data()) {
            assert_eq!(*a, 0.04 * b);
        }
    }

    #[test]
    fn points_outside_domain_rejected() {
        let m = zero_model(2, 1);
        assert!(matches!(m.reconstruct_at(&[0.0, 0.0], &[(1.5, 0.0)]), Err(Error::Domain(_))));
    }

    #[test]
    fn interpolation_nodes_and_midpoints() {
        let states = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        assert_eq!(interpolate_latent(&states, 1.0).unwrap(), states[1]);
        assert_eq!(interpolate_latent(&states, 2.0).unwrap(), states[2]);
        assert_eq!(interpolate_latent(&states, 0.5).unwrap(), vec![1.0, 2.0]);
        assert!(interpolate_latent(&states, 2.5).is_err());
        assert!(interpolate_latent(&states, -0.1).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let arch = LdnetArch { d_s: 3, d_u: 1, n_fields: 2, dynamics_layers: 2, dynamics_width: 5, recon_layers: 2, recon_width: 6, dt: 0.04 };
        let m = LdnetModel::new(&arch, 1).unwrap();
        let back = LdnetModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn relative_rmse_basics() {
        assert_eq!(relative_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((relative_rmse(&[2.0, 4.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(relative_rmse(&[1.0], &[0.0]), Err(Error::Metric(_))));
    }
}
