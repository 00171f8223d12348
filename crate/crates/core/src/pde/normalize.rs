//! Per-variable affine normalization.

use crate::error::{Error, Result};

/// Affine map for one variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VarNorm {
    /// `[min, max]` onto `[−1, 1]`.
    MinMax { min: f64, max: f64 },
    /// Zero mean, unit variance.
    ZScore { mean: f64, std: f64 },
}

impl VarNorm {
    pub fn fit_minmax(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config("cannot fit a normalizer on empty or non-finite data".into()));
        }
        if hi - lo <= 0.0 {
            // constant variable: shift only
            return Ok(VarNorm::MinMax { min: lo - 1.0, max: lo + 1.0 });
        }
        Ok(VarNorm::MinMax { min: lo, max: hi })
    }

    pub fn fit_zscore(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for v in values {
            n += 1.0;
            let d = v - mean;
            mean += d / n;
            m2 += d * (v - mean);
        }
        if n == 0.0 || !mean.is_finite() {
            return Err(Error::Config("cannot fit a normalizer on empty or non-finite data".into()));
        }
        let std = (m2 / n).sqrt();
        Ok(VarNorm::ZScore { mean, std: if std > 0.0 { std } else { 1.0 } })
    }

    /// Returns `(scale, offset)` with `normalized = (x − offset) / scale`.
    pub fn affine(&self) -> (f64, f64) {
        match *self {
            VarNorm::MinMax { min, max } => (0.5 * (max - min), 0.5 * (max + min)),
            VarNorm::ZScore { mean, std } => (std, mean),
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        let (s, o) = self.affine();
        (x - o) / s
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        let (s, o) = self.affine();
        z * s + o
    }

    pub(crate) fn tag(&self) -> (u8, f64, f64) {
        match *self {
            VarNorm::MinMax { min, max } => (0, min, max),
            VarNorm::ZScore { mean, std } => (1, mean, std),
        }
    }

    pub(crate) fn from_tag(tag: u8, a: f64, b: f64) -> Result<Self> {
        match tag {
            0 => Ok(VarNorm::MinMax { min: a, max: b }),
            1 => Ok(VarNorm::ZScore { mean: a, std: b }),
            t => Err(Error::Format(format!("unknown normalizer tag {t}"))),
        }
    }
}

/// One [`VarNorm`] per variable.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub vars: Vec<VarNorm>,
}

impl Normalizer {
    pub fn new(vars: Vec<VarNorm>) -> Self {
        Self { vars }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.vars.len() {
            return Err(Error::Dimension(format!("{} values for {} normalized variables", n, self.vars.len())));
        }
        Ok(())
    }

    /// Normalizes one value per variable.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter().zip(&self.vars).map(|(&v, n)| n.normalize(v)).collect())
    }

    pub fn denormalize(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len())?;
        Ok(z.iter().zip(&self.vars).map(|(&v, n)| n.denormalize(v)).collect())
    }

    /// Normalizes a field-major block `[var₀ block | var₁ block | …]` in place.
    pub fn normalize_blocks(&self, data: &mut [f64]) -> Result<()> {
        self.apply_blocks(data, VarNorm::normalize)
    }

    pub fn denormalize_blocks(&self, data: &mut [f64]) -> Result<()> {
        self.apply_blocks(data, VarNorm::denormalize)
    }

    fn apply_blocks(&self, data: &mut [f64], f: fn(&VarNorm, f64) -> f64) -> Result<()> {
        if self.vars.is_empty() || data.len() % self.vars.len() != 0 {
            return Err(Error::Dimension(format!(
                "block length {} not divisible by {} variables",
                data.len(),
                self.vars.len()
            )));
        }
        let block = data.len() / self.vars.len();
        for (chunk, n) in data.chunks_exact_mut(block).zip(&self.vars) {
            for v in chunk {
                *v = f(n, *v);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmax_maps_bounds_to_unit_interval() {
        let n = VarNorm::fit_minmax([3.0, -1.0, 7.0]).unwrap();
        assert_eq!(n.normalize(-1.0), -1.0);
        assert_eq!(n.normalize(7.0), 1.0);
        assert_eq!(n.normalize(3.0), 0.0);
    }

    #[test]
    fn zscore_standardizes() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let n = VarNorm::fit_zscore(xs).unwrap();
        let z: Vec<f64> = xs.iter().map(|&x| n.normalize(x)).collect();
        let mean = z.iter().sum::<f64>() / 4.0;
        let var = z.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_variable_is_invertible() {
        let n = VarNorm::fit_minmax([2.0, 2.0]).unwrap();
        assert_eq!(n.denormalize(n.normalize(2.0)), 2.0);
    }

    #[test]
    fn blocks_use_their_own_variable() {
        let nz = Normalizer::new(vec![VarNorm::MinMax { min: 0.0, max: 2.0 }, VarNorm::ZScore { mean: 10.0, std: 2.0 }]);
        let mut d = vec![0.0, 2.0, 10.0, 14.0];
        nz.normalize_blocks(&mut d).unwrap();
        assert_eq!(d, vec![-1.0, 1.0, 0.0, 2.0]);
        assert!(nz.normalize_blocks(&mut [0.0; 3]).is_err());
    }
}
