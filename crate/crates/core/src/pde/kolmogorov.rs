//! Forced 2-D incompressible Navier–Stokes on the periodic square [0, 2π]².
//!
//! Vorticity–streamfunction form, pseudo-spectral in space with 2/3-rule
//! dealiasing of the advection term, classical RK4 in time:
//!
//! ```text
//! ∂ω/∂t = −v·∇ω + ∇²ω / Re − drag · ω − A k_f cos(k_f ξ₂)
//! ```
//!
//! which is the curl of the momentum equation with body force
//! `f = A sin(k_f ξ₂) ê₁ − drag · v`. Velocity is recovered from the
//! streamfunction (`∇²ψ = −ω`, `v = (∂ψ/∂ξ₂, −∂ψ/∂ξ₁)`) and is therefore
//! divergence-free to round-off.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq)]
pub struct KolmogorovConfig {
    pub n: usize,
    /// Output step.
    pub dt: f64,
    /// Total steps simulated.
    pub n_steps: usize,
    /// First step kept in the dataset.
    pub keep_from: usize,
    /// Store every k-th state inside the kept window.
    pub save_every: usize,
    pub re_range: (f64, f64),
    /// Amplitude `A` of the sinusoidal body force.
    pub forcing_amplitude: f64,
    pub forcing_wavenumber: f64,
    pub drag: f64,
    /// RK4 sub-steps are added whenever the advective Courant number of a
    /// full step would exceed this value.
    pub max_courant: f64,
}

impl KolmogorovConfig {
    pub fn paper() -> Self {
        Self {
            n: 150,
            dt: 0.04,
            n_steps: 300,
            keep_from: 100,
            save_every: 1,
            re_range: (500.0, 1500.0),
            forcing_amplitude: 1.0,
            forcing_wavenumber: 4.0,
            drag: 0.1,
            max_courant: 0.5,
        }
    }

    pub fn desk() -> Self {
        Self { n: 64, ..Self::paper() }
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    /// States in the kept window `keep_from ..= n_steps`.
    pub fn n_stored(&self) -> usize {
        (self.n_steps - self.keep_from) / self.save_every + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 || self.n % 2 != 0 {
            return Err(Error::Config(format!("grid must be even and ≥ 8, got {}", self.n)));
        }
        if self.keep_from > self.n_steps {
            return Err(Error::Config("kept window starts after the last step".into()));
        }
        if self.save_every == 0 || (self.n_steps - self.keep_from) % self.save_every != 0 {
            return Err(Error::Config("save_every must divide the kept window".into()));
        }
        if !(self.dt > 0.0 && self.max_courant > 0.0) {
            return Err(Error::Config("dt and max_courant must be positive".into()));
        }
        if !(self.re_range.0 > 0.0 && self.re_range.0 <= self.re_range.1) {
            return Err(Error::Config("bad Reynolds-number range".into()));
        }
        Ok(())
    }

    pub fn sample_reynolds(&self, rng: &mut impl Rng) -> f64 {
        rng.gen_range(self.re_range.0..self.re_range.1)
    }
}

/// FFT plans and wavenumber tables for an `n × n` periodic grid.
pub struct SpectralGrid {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Integer wavenumber per index (0, 1, …, n/2−1, −n/2, …, −1).
    k: Vec<f64>,
    /// 2/3-rule mask over the flattened spectrum.
    dealias: Vec<f64>,
}

impl SpectralGrid {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let k: Vec<f64> = (0..n).map(|i| if i < n / 2 { i as f64 } else { i as f64 - n as f64 }).collect();
        let cutoff = n as f64 / 3.0;
        let mut dealias = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                if k[i].abs() < cutoff && k[j].abs() < cutoff {
                    dealias[j * n + i] = 1.0;
                }
            }
        }
        Self { n, fwd, inv, k, dealias }
    }

    /// Wavenumbers `(k₁, k₂)` of flattened index `idx = j·n + i`.
    pub fn wavenumber(&self, idx: usize) -> (f64, f64) {
        (self.k[idx % self.n], self.k[idx / self.n])
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        for row in data.chunks_exact_mut(n) {
            plan.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                col[j] = data[j * n + i];
            }
            plan.process(&mut col);
            for j in 0..n {
                data[j * n + i] = col[j];
            }
        }
    }

    pub fn forward(&self, real: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = real.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut d, &self.fwd);
        d
    }

    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut d = spec.to_vec();
        self.transform(&mut d, &self.inv);
        let s = 1.0 / (self.n * self.n) as f64;
        d.iter().map(|c| c.re * s).collect()
    }

    /// Spectral velocity `(v̂₁, v̂₂)` from vorticity.
    pub fn velocity_hat(&self, omega_hat: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let i = Complex64::new(0.0, 1.0);
        let mut u = vec![Complex64::new(0.0, 0.0); omega_hat.len()];
        let mut v = u.clone();
        for (idx, w) in omega_hat.iter().enumerate() {
            let (k1, k2) = self.wavenumber(idx);
            let k2sum = k1 * k1 + k2 * k2;
            if k2sum == 0.0 {
                continue;
            }
            let psi = w / k2sum;
            u[idx] = i * k2 * psi;
            v[idx] = -i * k1 * psi;
        }
        (u, v)
    }

    /// Spectral divergence magnitude of a physical velocity field.
    pub fn divergence_max(&self, vx: &[f64], vy: &[f64]) -> f64 {
        let (ux, uy) = (self.forward(vx), self.forward(vy));
        let i = Complex64::new(0.0, 1.0);
        let div: Vec<Complex64> = (0..ux.len())
            .map(|idx| {
                let (k1, k2) = self.wavenumber(idx);
                i * k1 * ux[idx] + i * k2 * uy[idx]
            })
            .collect();
        self.inverse(&div).iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Spectral vorticity on an `n × n` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct KfState {
    pub omega_hat: Vec<Complex64>,
}

impl KfState {
    pub fn from_vorticity(grid: &SpectralGrid, omega: &[f64]) -> Self {
        let mut w = grid.forward(omega);
        // no mean vorticity on a periodic domain; drop the Nyquist modes
        w[0] = Complex64::new(0.0, 0.0);
        let n = grid.n;
        for idx in 0..w.len() {
            if idx % n == n / 2 || idx / n == n / 2 {
                w[idx] = Complex64::new(0.0, 0.0);
            }
        }
        Self { omega_hat: w }
    }

    /// Spectral curl `ω = ∂₁v₂ − ∂₂v₁` of a velocity field.
    pub fn from_velocity(grid: &SpectralGrid, vx: &[f64], vy: &[f64]) -> Self {
        let (ux, uy) = (grid.forward(vx), grid.forward(vy));
        let i = Complex64::new(0.0, 1.0);
        let omega_hat: Vec<Complex64> = (0..ux.len())
            .map(|idx| {
                let (k1, k2) = grid.wavenumber(idx);
                i * k1 * uy[idx] - i * k2 * ux[idx]
            })
            .collect();
        Self::from_vorticity(grid, &grid.inverse(&omega_hat))
    }

    pub fn vorticity(&self, grid: &SpectralGrid) -> Vec<f64> {
        grid.inverse(&self.omega_hat)
    }

    pub fn velocity(&self, grid: &SpectralGrid) -> (Vec<f64>, Vec<f64>) {
        let (u, v) = grid.velocity_hat(&self.omega_hat);
        (grid.inverse(&u), grid.inverse(&v))
    }

    /// Field-major `[v₁ | v₂]`.
    pub fn to_fields(&self, grid: &SpectralGrid) -> Vec<f64> {
        let (mut u, v) = self.velocity(grid);
        u.extend_from_slice(&v);
        u
    }

    pub fn kinetic_energy(&self, grid: &SpectralGrid) -> f64 {
        let (u, v) = self.velocity(grid);
        0.5 * u.iter().zip(&v).map(|(a, b)| a * a + b * b).sum::<f64>() / u.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.omega_hat.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Right-hand side of the vorticity equation in spectral space.
fn rhs(grid: &SpectralGrid, w: &[Complex64], re: f64, cfg: &KolmogorovConfig, forcing: &[Complex64]) -> Vec<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    let n2 = w.len();
    let masked: Vec<Complex64> = w.iter().zip(&grid.dealias).map(|(a, m)| a * m).collect();
    let (uh, vh) = grid.velocity_hat(&masked);
    let mut wx = vec![Complex64::new(0.0, 0.0); n2];
    let mut wy = wx.clone();
    for idx in 0..n2 {
        let (k1, k2) = grid.wavenumber(idx);
        wx[idx] = i * k1 * masked[idx];
        wy[idx] = i * k2 * masked[idx];
    }
    let (u, v) = (grid.inverse(&uh), grid.inverse(&vh));
    let (gx, gy) = (grid.inverse(&wx), grid.inverse(&wy));
    let adv: Vec<f64> = (0..n2).map(|p| u[p] * gx[p] + v[p] * gy[p]).collect();
    let adv_hat = grid.forward(&adv);
    let nu = 1.0 / re;
    (0..n2)
        .map(|idx| {
            let (k1, k2) = grid.wavenumber(idx);
            let k2sum = k1 * k1 + k2 * k2;
            -adv_hat[idx] * grid.dealias[idx] - (nu * k2sum + cfg.drag) * w[idx] + forcing[idx]
        })
        .collect()
}

/// Spectrum of the vorticity source `−A k_f cos(k_f ξ₂)`.
pub fn forcing_hat(grid: &SpectralGrid, cfg: &KolmogorovConfig) -> Vec<Complex64> {
    let n = grid.n;
    let mut f = vec![0.0; n * n];
    let dx = 2.0 * PI / n as f64;
    for j in 0..n {
        let y = j as f64 * dx;
        let val = -cfg.forcing_amplitude * cfg.forcing_wavenumber * (cfg.forcing_wavenumber * y).cos();
        for i in 0..n {
            f[j * n + i] = val;
        }
    }
    grid.forward(&f)
}

fn max_speed(grid: &SpectralGrid, w: &[Complex64]) -> f64 {
    let (uh, vh) = grid.velocity_hat(w);
    let (u, v) = (grid.inverse(&uh), grid.inverse(&vh));
    u.iter().zip(&v).fold(0.0, |m, (a, b)| m.max((a * a + b * b).sqrt()))
}

/// Advances one output step `cfg.dt`, sub-stepping RK4 when the flow is
/// fast enough to need it.
pub fn kf_step(state: &KfState, re: f64, cfg: &KolmogorovConfig, grid: &SpectralGrid, step_index: usize) -> Result<KfState> {
    let forcing = forcing_hat(grid, cfg);
    kf_step_with(state, re, cfg, grid, &forcing, step_index)
}

pub(crate) fn kf_step_with(
    state: &KfState,
    re: f64,
    cfg: &KolmogorovConfig,
    grid: &SpectralGrid,
    forcing: &[Complex64],
    step_index: usize,
) -> Result<KfState> {
    let courant = max_speed(grid, &state.omega_hat) * cfg.dt / cfg.dx();
    let subs = ((courant / cfg.max_courant).ceil() as usize).max(1);
    let h = cfg.dt / subs as f64;
    let mut w = state.omega_hat.clone();
    for _ in 0..subs {
        let k1 = rhs(grid, &w, re, cfg, forcing);
        let w2: Vec<Complex64> = w.iter().zip(&k1).map(|(a, k)| a + k * (0.5 * h)).collect();
        let k2 = rhs(grid, &w2, re, cfg, forcing);
        let w3: Vec<Complex64> = w.iter().zip(&k2).map(|(a, k)| a + k * (0.5 * h)).collect();
        let k3 = rhs(grid, &w3, re, cfg, forcing);
        let w4: Vec<Complex64> = w.iter().zip(&k3).map(|(a, k)| a + k * h).collect();
        let k4 = rhs(grid, &w4, re, cfg, forcing);
        for idx in 0..w.len() {
            w[idx] += (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]) * (h / 6.0);
        }
    }
    let next = KfState { omega_hat: w };
    if !next.is_finite() {
        return Err(Error::BlowUp { step: step_index, detail: "non-finite vorticity spectrum".into() });
    }
    Ok(next)
}

/// Fixed multi-mode vorticity field shared by every trajectory.
pub fn initial_vorticity(n: usize) -> Vec<f64> {
    let mut rng = stream(0x4b46_5f49_4e49_5400, &[]);
    let mut modes = Vec::new();
    for k1 in -4i32..=4 {
        for k2 in -4i32..=4 {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let kk = (k1 * k1 + k2 * k2) as f64;
            let amp = rng.gen_range(-1.0..1.0) * (-kk / 8.0).exp();
            let phase = rng.gen_range(0.0..2.0 * PI);
            modes.push((k1 as f64, k2 as f64, amp, phase));
        }
    }
    let dx = 2.0 * PI / n as f64;
    let mut w = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (i as f64 * dx, j as f64 * dx);
            w[j * n + i] = modes.iter().map(|&(a, b, amp, ph)| amp * (a * x + b * y + ph).cos()).sum::<f64>() * 4.0;
        }
    }
    w
}

/// Runs one trajectory and returns the kept states as velocity fields.
pub fn simulate_kf(re: f64, cfg: &KolmogorovConfig, grid: &SpectralGrid, omega0: &[f64]) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if grid.n != cfg.n || omega0.len() != cfg.n * cfg.n {
        return Err(Error::Dimension("initial field does not match the grid".into()));
    }
    let forcing = forcing_hat(grid, cfg);
    let mut s = KfState::from_vorticity(grid, omega0);
    let mut out = Vec::with_capacity(cfg.n_stored());
    if cfg.keep_from == 0 {
        out.push(s.to_fields(grid));
    }
    for step in 1..=cfg.n_steps {
        s = kf_step_with(&s, re, cfg, grid, &forcing, step)?;
        if step >= cfg.keep_from && (step - cfg.keep_from) % cfg.save_every == 0 {
            out.push(s.to_fields(grid));
        }
    }
    Ok(out)
}
