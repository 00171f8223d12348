//! Sparse observations and the LSTM encoder that maps an observation
//! history to a latent state and parameter estimate.

use std::rc::Rc;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;

use crate::autodiff::Tape;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::ldnet::LdnetModel;
use crate::nn::{LstmParams, LstmState, dropout_masks, lstm_step};
use crate::optim::{AdamConfig, LrSchedule, OptimizerState};
use crate::pde::dataset::{Dataset, Split, Subsample};
use crate::pde::normalize::{Normalizer, VarNorm};
use crate::rng::{derive, stream};
use crate::tensor::Tensor;

const TAG_OBS_NOISE: u64 = 0x31;
const TAG_SHUFFLE: u64 = 0x32;
const TAG_DROPOUT: u64 = 0x33;
const TAG_INIT: u64 = 0x34;

/// Uniform `m × m` sub-lattice of an `n × n` grid, applied to a set of
/// fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationOperator {
    pub grid: usize,
    pub m: usize,
    /// Observed field indices.
    pub fields: Vec<usize>,
    /// Field count of the full state.
    pub n_fields: usize,
    /// Observed cells, row-major over the sub-lattice.
    pub cells: Vec<usize>,
}

impl ObservationOperator {
    /// Lattice index `k` maps to grid index `⌊(k + ½) n / m⌋`.
    pub fn new(grid: usize, m: usize, fields: Vec<usize>, n_fields: usize) -> Result<Self> {
        if m == 0 || m > grid {
            return Err(Error::Config(format!("observation lattice {m} does not fit a grid of {grid}")));
        }
        if fields.is_empty() || fields.iter().any(|&f| f >= n_fields) {
            return Err(Error::Config(format!("observed fields {fields:?} invalid for {n_fields} fields")));
        }
        let axis: Vec<usize> = (0..m).map(|k| ((2 * k + 1) * grid) / (2 * m)).collect();
        let cells = axis.iter().flat_map(|&j| axis.iter().map(move |&i| j * grid + i)).collect();
        Ok(Self { grid, m, fields, n_fields, cells })
    }

    /// Every field observed.
    pub fn all_fields(grid: usize, m: usize, n_fields: usize) -> Result<Self> {
        Self::new(grid, m, (0..n_fields).collect(), n_fields)
    }

    pub fn dim(&self) -> usize {
        self.cells.len() * self.fields.len()
    }

    /// Positions of the observations in the field-major full state.
    pub fn state_indices(&self) -> Vec<usize> {
        let n2 = self.grid * self.grid;
        self.fields.iter().flat_map(|&f| self.cells.iter().map(move |&c| f * n2 + c)).collect()
    }

    fn check(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.n_fields * self.grid * self.grid {
            return Err(Error::Dimension(format!(
                "state of length {} for {} fields on a {}² grid",
                state.len(),
                self.n_fields,
                self.grid
            )));
        }
        Ok(())
    }

    /// Noiseless sub-lattice values.
    pub fn gather(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check(state)?;
        Ok(self.state_indices().iter().map(|&i| state[i]).collect())
    }

    /// Per-observation noise standard deviation: `rho` times the RMS of the
    /// observed field over the full grid.
    pub fn noise_std(&self, state: &[f64], rho: f64) -> Result<Vec<f64>> {
        self.check(state)?;
        let n2 = self.grid * self.grid;
        let mut out = Vec::with_capacity(self.dim());
        for &f in &self.fields {
            let block = &state[f * n2..(f + 1) * n2];
            let rms = (block.iter().map(|v| v * v).sum::<f64>() / n2 as f64).sqrt();
            out.extend(std::iter::repeat_n(rho * rms, self.cells.len()));
        }
        Ok(out)
    }

    /// `H(x) + γ` with `γ ~ N(0, diag(noise_std²))`. The standard-normal
    /// draws depend only on `(seed, tags)`, so different noise levels see
    /// the same draws scaled differently.
    pub fn observe(&self, state: &[f64], rho: f64, seed: u64, tags: &[u64]) -> Result<Vec<f64>> {
        let mut y = self.gather(state)?;
        if rho == 0.0 {
            return Ok(y);
        }
        let std = self.noise_std(state, rho)?;
        let mut all = vec![TAG_OBS_NOISE];
        all.extend_from_slice(tags);
        let mut rng = stream(seed, &all);
        for (v, s) in y.iter_mut().zip(&std) {
            let z: f64 = rng.sample(StandardNormal);
            *v += s * z;
        }
        Ok(y)
    }
}

/// LSTM encoder plus the input normalization it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub lstm: LstmParams,
    pub d_s: usize,
    pub d_u: usize,
    pub op: ObservationOperator,
    /// Normalizer of each observed field.
    pub input_norm: Normalizer,
}

/// Carried encoder state for one observation stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStream {
    pub state: LstmState,
}

impl EncoderModel {
    pub fn new(
        op: ObservationOperator,
        field_norm: &Normalizer,
        d_s: usize,
        d_u: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        let input_norm = Normalizer::new(op.fields.iter().map(|&f| field_norm.vars[f]).collect());
        let lstm = LstmParams::new(op.dim(), hidden, layers, d_s + d_u, dropout, derive(seed, &[TAG_INIT]))?;
        Ok(Self { lstm, d_s, d_u, op, input_norm })
    }

    pub fn output_width(&self) -> usize {
        self.d_s + self.d_u
    }

    /// Observation in the encoder's input units.
    pub fn normalize_obs(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.op.dim() {
            return Err(Error::Dimension(format!("observation of width {} (expected {})", y.len(), self.op.dim())));
        }
        let mut z = y.to_vec();
        self.input_norm.normalize_blocks(&mut z)?;
        Ok(z)
    }

    pub fn start(&self) -> EncoderStream {
        EncoderStream { state: self.lstm.initial_state(1) }
    }

    /// Feeds one physical observation, returning `(ŝ, û)` concatenated.
    pub fn push(&self, stream: &mut EncoderStream, y: &[f64]) -> Result<Vec<f64>> {
        let z = self.normalize_obs(y)?;
        let (out, next) = lstm_step(&self.lstm, &Tensor::matrix(1, z.len(), z)?, &stream.state)?;
        stream.state = next;
        Ok(out.into_data())
    }

    /// Encodes a whole sequence from a zero state.
    pub fn encode_sequence(&self, ys: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut st = self.start();
        ys.iter().map(|y| self.push(&mut st, y)).collect()
    }

    /// Encodes several equally long sequences at once (`seqs[b][t]`).
    pub fn encode_batch(&self, seqs: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let b = seqs.len();
        let n_t = seqs.first().map_or(0, Vec::len);
        let mut state = self.lstm.initial_state(b);
        let mut out = vec![Vec::with_capacity(n_t); b];
        for t in 0..n_t {
            let mut rows = Vec::with_capacity(b * self.op.dim());
            for s in seqs {
                rows.extend(self.normalize_obs(&s[t])?);
            }
            let (o, next) = lstm_step(&self.lstm, &Tensor::matrix(b, self.op.dim(), rows)?, &state)?;
            state = next;
            for (i, seq_out) in out.iter_mut().enumerate() {
                seq_out.push(o.row(i).to_vec());
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new()
            .with_meta("model", "encoder")
            .with_meta("d_s", self.d_s)
            .with_meta("d_u", self.d_u)
            .with_meta("hidden", self.lstm.hidden)
            .with_meta("layers", self.lstm.layers.len())
            .with_meta("dropout", self.lstm.dropout)
            .with_meta("grid", self.op.grid)
            .with_meta("obs_grid", self.op.m)
            .with_meta("n_fields", self.op.n_fields)
            .with_meta("fields", self.op.fields.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","));
        let norm: Vec<f64> = self
            .input_norm
            .vars
            .iter()
            .flat_map(|v| {
                let (t, a, b) = v.tag();
                [t as f64, a, b]
            })
            .collect();
        ck.push("input_norm", &Tensor::matrix(self.input_norm.len(), 3, norm).expect("shape"));
        for (name, t) in self.lstm.named_params("lstm") {
            ck.push(name, t);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_str("model")? != "encoder" {
            return Err(Error::Format("checkpoint does not hold an encoder".into()));
        }
        let fields = ck
            .meta_str("fields")?
            .split(',')
            .map(|f| f.parse().map_err(|_| Error::Format(format!("bad field index {f:?}"))))
            .collect::<Result<Vec<usize>>>()?;
        let op = ObservationOperator::new(ck.meta_parse("grid")?, ck.meta_parse("obs_grid")?, fields, ck.meta_parse("n_fields")?)?;
        let (d_s, d_u): (usize, usize) = (ck.meta_parse("d_s")?, ck.meta_parse("d_u")?);
        let (hidden, layers): (usize, usize) = (ck.meta_parse("hidden")?, ck.meta_parse("layers")?);
        let mut lstm = LstmParams::zeros(op.dim(), hidden, layers, d_s + d_u);
        lstm.dropout = ck.meta_parse("dropout")?;
        let names: Vec<String> = lstm.named_params("lstm").into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(lstm.params_mut()) {
            let t = ck.get(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!("parameter {name} has shape {:?}", t.shape())));
            }
            *slot = t.clone();
        }
        let raw = ck.get("input_norm")?;
        let vars = (0..raw.rows())
            .map(|r| {
                let row = raw.row(r);
                VarNorm::from_tag(row[0] as u8, row[1], row[2])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { lstm, d_s, d_u, op, input_norm: Normalizer::new(vars) })
    }
}

/// Encoder optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl EncoderTrainConfig {
    pub fn paper_sw() -> Self {
        Self {
            epochs: 30000,
            batch_size: 16,
            hidden: 256,
            layers: 2,
            dropout: 0.02,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            schedule: LrSchedule::CosineAnnealing { t_max: 5000, eta_min: 1e-3 },
            seed: 0,
        }
    }

    pub fn paper_kf() -> Self {
        Self {
            hidden: 128,
            layers: 1,
            dropout: 0.0,
            adam: AdamConfig { lr: 1e-4, ..AdamConfig::default() },
            schedule: LrSchedule::CosineAnnealing { t_max: 5000, eta_min: 2e-4 },
            ..Self::paper_sw()
        }
    }
}

/// Encoder training targets for one trajectory.
pub struct EncoderSample {
    /// Noiseless observation per retained time.
    pub obs: Vec<Vec<f64>>,
    /// `(s_t, u)` per retained time.
    pub target: Vec<Vec<f64>>,
}

/// LDNet rollout latents at the true parameters, paired with noiseless
/// observations at the retained times.
pub fn encoder_samples(
    ldnet: &LdnetModel,
    data: &Dataset,
    view: &Subsample,
    op: &ObservationOperator,
    trajectories: &[usize],
) -> Result<Vec<EncoderSample>> {
    trajectories
        .iter()
        .map(|&j| {
            let u = data.normalized_params(j)?;
            let seq = ldnet.latent_rollout(&vec![u.clone(); view.n_times()], view.n_times())?;
            let obs = view
                .time_indices
                .iter()
                .map(|&ti| op.gather(&data.trajectories[j].states[ti]))
                .collect::<Result<Vec<_>>>()?;
            let target = seq.into_iter().map(|mut s| {
                s.extend_from_slice(&u);
                s
            });
            Ok(EncoderSample { obs, target: target.collect() })
        })
        .collect()
}

/// Minimizes the squared error of `(ŝ_t, û_t)` against the LDNet latents
/// and true parameters over every retained step, with full
/// backpropagation through time.
pub fn train_encoder(
    ldnet: &LdnetModel,
    data: &Dataset,
    view: &Subsample,
    op: &ObservationOperator,
    cfg: &EncoderTrainConfig,
) -> Result<(EncoderModel, Vec<f64>)> {
    let mut model = EncoderModel::new(op.clone(), &data.field_norm, ldnet.d_s, ldnet.d_u, cfg.hidden, cfg.layers, cfg.dropout, cfg.seed)?;
    let train = data.indices(Split::Train);
    let samples = encoder_samples(ldnet, data, view, op, &train)?;
    let losses = fit_encoder(&mut model, &samples, cfg)?;
    Ok((model, losses))
}

/// Optimizes `model` on prepared samples; returns the mean loss per epoch.
pub fn fit_encoder(model: &mut EncoderModel, samples: &[EncoderSample], cfg: &EncoderTrainConfig) -> Result<Vec<f64>> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::Config("no training sequences".into()));
    }
    let n_t = samples[0].obs.len();
    if samples.iter().any(|s| s.obs.len() != n_t || s.target.len() != n_t) {
        return Err(Error::Dimension("training sequences differ in length".into()));
    }
    let width = model.output_width();
    let inputs: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .map(|s| s.obs.iter().map(|y| model.normalize_obs(y)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let names: Vec<String> = model.lstm.named_params("lstm").into_iter().map(|(n, _)| n).collect();
    let mut opt = {
        let params: Vec<Tensor> = model.lstm.named_params("lstm").into_iter().map(|(_, t)| t.clone()).collect();
        OptimizerState::new(cfg.adam.clone(), cfg.schedule.clone(), params.iter())
    };
    let ids: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = ids.clone();
        order.shuffle(&mut stream(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let (mut total, mut count) = (0.0, 0);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let b = batch.len();
            let mut tape = Tape::new();
            let lv = model.lstm.bind(&mut tape);
            let mut state = lv.initial_state(&mut tape, b);
            let mut outs = Vec::with_capacity(n_t);
            let mut target = Vec::with_capacity(n_t * b * width);
            for t in 0..n_t {
                let rows: Vec<f64> = batch.iter().flat_map(|&i| inputs[i][t].iter().copied()).collect();
                let x = tape.constant(Tensor::matrix(b, model.op.dim(), rows)?);
                let masks = dropout_masks(&model.lstm, b, cfg.seed, &[TAG_DROPOUT, epoch as u64, bi as u64, t as u64]);
                let (o, next) = lv.step(&mut tape, x, &state, masks.as_deref())?;
                state = next;
                outs.push(o);
                for &i in batch {
                    target.extend_from_slice(&samples[i].target[t]);
                }
            }
            let all = tape.concat_rows(&outs)?;
            let loss = tape.mse(all, Rc::new(Tensor::matrix(n_t * b, width, target)?))?;
            let l = tape.value(loss).item()?;
            if !l.is_finite() {
                return Err(Error::Training(format!("non-finite encoder loss at epoch {epoch}")));
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = lv.vars().into_iter().map(|v| grads.take(v)).collect();
            opt.adam_step(epoch, &names, &mut model.lstm.params_mut(), &g)?;
            total += l;
            count += 1;
        }
        losses.push(total / count as f64);
    }
    Ok(losses)
}

/// Mean over trajectories and steps of `‖(ŝ, û) − (s, u)‖ / ‖(s, u)‖`.
pub fn encoder_relative_error(model: &EncoderModel, samples: &[EncoderSample]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        for (out, tgt) in model.encode_sequence(&s.obs)?.iter().zip(&s.target) {
            total += crate::ldnet::relative_rmse(out, tgt)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Metric("no encoder outputs to compare".into()));
    }
    Ok(total / count as f64)
}

/// Diagonal latent observation noise.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentNoiseModel {
    pub std: Vec<f64>,
    pub rho: f64,
}

pub const LATENT_NOISE_FLOOR: f64 = 1e-4;

/// Root-mean-square difference between encodings of noisy and noiseless
/// observation sequences, per latent coordinate, floored at 1e-4.
pub fn estimate_latent_noise(
    model: &EncoderModel,
    data: &Dataset,
    view: &Subsample,
    trajectories: &[usize],
    rho: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LatentNoiseModel> {
    if trajectories.is_empty() || n_samples == 0 {
        return Err(Error::Config("noise estimation needs trajectories and samples".into()));
    }
    let w = model.output_width();
    let mut acc = vec![0.0; w];
    let mut count = 0usize;
    for &j in trajectories {
        let states: Vec<&Vec<f64>> = view.time_indices.iter().map(|&ti| &data.trajectories[j].states[ti]).collect();
        let clean_obs = states.iter().map(|s| model.op.gather(s)).collect::<Result<Vec<_>>>()?;
        let clean = model.encode_sequence(&clean_obs)?;
        for k in 0..n_samples {
            let noisy_obs = states
                .iter()
                .enumerate()
                .map(|(t, s)| model.op.observe(s, rho, seed, &[j as u64, k as u64, t as u64]))
                .collect::<Result<Vec<_>>>()?;
            for (a, b) in model.encode_sequence(&noisy_obs)?.iter().zip(&clean) {
                for (c, (x, y)) in acc.iter_mut().zip(a.iter().zip(b)) {
                    *c += (x - y) * (x - y);
                }
                count += 1;
            }
        }
    }
    let std = acc.iter().map(|s| (s / count as f64).sqrt().max(LATENT_NOISE_FLOOR)).collect();
    Ok(LatentNoiseModel { std, rho })
}
