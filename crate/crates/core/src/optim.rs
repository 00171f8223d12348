//! Adam with per-epoch learning-rate schedules.

use crate::error::{Error, Result, dim_err};
use crate::tensor::Tensor;

/// Learning rate as a function of the epoch index.
#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// `lr · gamma^(epoch / step_size)`
    StepLr { gamma: f64, step_size: usize },
    /// `eta_min + (lr − eta_min)(1 + cos(π · epoch / t_max)) / 2`
    CosineAnnealing { t_max: usize, eta_min: f64 },
}

impl LrSchedule {
    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::StepLr { gamma, step_size } => base * gamma.powi((epoch / step_size.max(1)) as i32),
            LrSchedule::CosineAnnealing { t_max, eta_min } => {
                let t = std::f64::consts::PI * epoch as f64 / t_max.max(1) as f64;
                eta_min + (base - eta_min) * (1.0 + t.cos()) / 2.0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments and step counter for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub schedule: LrSchedule,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<'a>(config: AdamConfig, schedule: LrSchedule, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let shapes: Vec<&Tensor> = params.into_iter().collect();
        Self {
            config,
            schedule,
            first: shapes.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: shapes.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule.lr(self.config.lr, epoch)
    }

    /// One bias-corrected Adam update at the learning rate of `epoch`.
    ///
    /// `names` labels the parameters for error messages; gradients are
    /// checked for finiteness before anything is modified.
    pub fn adam_step(&mut self, epoch: usize, names: &[String], params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return dim_err(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return dim_err(format!("gradient shape mismatch for {}", label(names, i)));
            }
            if !g.is_finite() {
                return Err(Error::Training(format!("non-finite gradient for {}", label(names, i))));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let lr = self.lr_at(epoch);
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn label(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("parameter #{i}"))
}
