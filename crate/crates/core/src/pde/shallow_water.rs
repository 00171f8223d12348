//! Linearized-depth shallow water equations on a closed square basin.
//!
//! ```text
//! dv/dt = −g ∇η
//! dη/dt = −∇·((η + H) v)
//! ```
//!
//! Cell-centered collocated grid, `v = 0` on the boundary ring. The momentum
//! update uses centered differences of `η`; the continuity update is in
//! conservative flux form with face velocities averaged from the two
//! neighbours and the transported depth taken from the upwind cell. The
//! momentum update is applied first and the continuity update uses the new
//! velocity (forward–backward stepping).

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ShallowWaterConfig {
    /// Cells per side.
    pub n: usize,
    /// Side length in metres.
    pub length: f64,
    /// Mean depth `H` in metres.
    pub depth: f64,
    pub gravity: f64,
    /// Solver step in seconds.
    pub dt: f64,
    pub n_steps: usize,
    /// Store every k-th state (the initial state is always stored).
    pub save_every: usize,
    /// Peak surface displacement of the initial bump, metres.
    pub bump_amplitude: f64,
    /// Gaussian standard deviation of the bump, metres.
    pub bump_width: f64,
}

impl ShallowWaterConfig {
    /// 150 × 150 grid, 2000 steps of ≈21 s, every state stored.
    pub fn paper() -> Self {
        let mut c = Self {
            n: 150,
            length: 1e6,
            depth: 100.0,
            gravity: 9.81,
            dt: 0.0,
            n_steps: 2000,
            save_every: 1,
            bump_amplitude: 1.0,
            bump_width: 1e6 / 20.0,
        };
        c.dt = c.default_dt();
        c
    }

    /// 64 × 64 grid over a shortened horizon with wider bumps, storing every 20th state.
    pub fn desk() -> Self {
        let mut c = Self { n: 64, n_steps: 500, save_every: 20, bump_width: 1e6 / 8.0, ..Self::paper() };
        c.dt = c.default_dt();
        c
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn wave_speed(&self) -> f64 {
        (self.gravity * self.depth).sqrt()
    }

    /// Gravity-wave CFL limit `dx / sqrt(g H)`.
    pub fn cfl_limit(&self) -> f64 {
        self.dx() / self.wave_speed()
    }

    /// Largest step ≤ 21 s that stays within half the CFL limit.
    pub fn default_dt(&self) -> f64 {
        21.0_f64.min(0.5 * self.cfl_limit())
    }

    pub fn n_stored(&self) -> usize {
        self.n_steps / self.save_every + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::Config(format!("grid must be at least 8×8, got {}", self.n)));
        }
        if !(self.dt > 0.0) || self.dt >= self.cfl_limit() {
            return Err(Error::Config(format!(
                "dt = {} s violates the CFL bound {} s",
                self.dt,
                self.cfl_limit()
            )));
        }
        if self.save_every == 0 || self.n_steps % self.save_every != 0 {
            return Err(Error::Config("save_every must divide n_steps".into()));
        }
        if !(self.depth > 0.0 && self.gravity > 0.0 && self.length > 0.0 && self.bump_width > 0.0) {
            return Err(Error::Config("physical constants must be positive".into()));
        }
        Ok(())
    }

    /// Cell-center coordinate along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }
}

/// Surface elevation and velocity, each `n × n` row-major with the row
/// index running along ξ₂.
#[derive(Clone, Debug, PartialEq)]
pub struct SwState {
    pub n: usize,
    pub eta: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl SwState {
    pub fn zeros(n: usize) -> Self {
        Self { n, eta: vec![0.0; n * n], vx: vec![0.0; n * n], vy: vec![0.0; n * n] }
    }

    /// Field-major concatenation `[η | vx | vy]`.
    pub fn to_fields(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.eta.len());
        out.extend_from_slice(&self.eta);
        out.extend_from_slice(&self.vx);
        out.extend_from_slice(&self.vy);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.eta.iter().chain(&self.vx).chain(&self.vy).all(|x| x.is_finite())
    }

    /// Discrete mass `Σ η · dx²`.
    pub fn mass(&self, dx: f64) -> f64 {
        self.eta.iter().sum::<f64>() * dx * dx
    }
}

/// Flat surface plus a Gaussian bump centered at `center`, at rest.
pub fn sw_initial_bump(center: (f64, f64), cfg: &ShallowWaterConfig) -> Result<SwState> {
    let (cx, cy) = center;
    let inside = |c: f64| (0.0..=cfg.length).contains(&c);
    if !inside(cx) || !inside(cy) {
        return Err(Error::Domain(format!(
            "bump center ({cx}, {cy}) outside [0, {}]²",
            cfg.length
        )));
    }
    let n = cfg.n;
    let mut s = SwState::zeros(n);
    let two_w2 = 2.0 * cfg.bump_width * cfg.bump_width;
    for j in 0..n {
        let dy = cfg.coord(j) - cy;
        for i in 0..n {
            let dx = cfg.coord(i) - cx;
            s.eta[j * n + i] = cfg.bump_amplitude * (-(dx * dx + dy * dy) / two_w2).exp();
        }
    }
    Ok(s)
}

/// Uniform bump center over the basin.
pub fn sample_bump_center(cfg: &ShallowWaterConfig, rng: &mut impl Rng) -> (f64, f64) {
    (rng.gen_range(0.0..cfg.length), rng.gen_range(0.0..cfg.length))
}

/// One solver step. `step_index` is only used for error reporting.
pub fn sw_step(state: &SwState, cfg: &ShallowWaterConfig, step_index: usize) -> Result<SwState> {
    if state.n != cfg.n {
        return Err(Error::Dimension(format!("state grid {} vs config {}", state.n, cfg.n)));
    }
    if cfg.dt >= cfg.cfl_limit() {
        return Err(Error::Config(format!("dt = {} s violates the CFL bound", cfg.dt)));
    }
    let mut next = state.clone();
    sw_step_in_place(&mut next, cfg);
    if !next.is_finite() {
        return Err(Error::BlowUp { step: step_index, detail: "non-finite shallow-water state".into() });
    }
    Ok(next)
}

pub(crate) fn sw_step_in_place(s: &mut SwState, cfg: &ShallowWaterConfig) {
    let n = cfg.n;
    let dx = cfg.dx();
    let dt = cfg.dt;
    let g = cfg.gravity;
    let h = cfg.depth;
    let k = g * dt / (2.0 * dx);

    // momentum: interior cells only; the boundary ring stays at rest
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let c = j * n + i;
            s.vx[c] -= k * (s.eta[c + 1] - s.eta[c - 1]);
            s.vy[c] -= k * (s.eta[c + n] - s.eta[c - n]);
        }
    }

    // continuity: flux divergence with zero flux through the walls
    let r = dt / dx;
    let mut div = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n - 1 {
            let (a, b) = (j * n + i, j * n + i + 1);
            let u = 0.5 * (s.vx[a] + s.vx[b]);
            let depth = if u >= 0.0 { h + s.eta[a] } else { h + s.eta[b] };
            let f = u * depth;
            div[a] += f;
            div[b] -= f;
        }
    }
    for j in 0..n - 1 {
        for i in 0..n {
            let (a, b) = (j * n + i, (j + 1) * n + i);
            let v = 0.5 * (s.vy[a] + s.vy[b]);
            let depth = if v >= 0.0 { h + s.eta[a] } else { h + s.eta[b] };
            let f = v * depth;
            div[a] += f;
            div[b] -= f;
        }
    }
    for (e, d) in s.eta.iter_mut().zip(&div) {
        *e -= r * d;
    }
}

/// Integrates from `initial`, returning the stored states.
pub fn simulate_sw(initial: SwState, cfg: &ShallowWaterConfig) -> Result<Vec<SwState>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_stored());
    let mut s = initial;
    out.push(s.clone());
    for step in 1..=cfg.n_steps {
        sw_step_in_place(&mut s, cfg);
        if !s.is_finite() {
            return Err(Error::BlowUp { step, detail: "non-finite shallow-water state".into() });
        }
        if step % cfg.save_every == 0 {
            out.push(s.clone());
        }
    }
    Ok(out)
}
