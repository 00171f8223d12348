//! Binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "LFCKPT\0\0"
//! version  u32
//! meta     u32 count, then (key, value) string pairs
//! params   u32 count, then per entry:
//!            name string, u32 rank, rank × u64 dims, product(dims) × f64
//! optim    u8 flag; when 1:
//!            u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//!            u8 schedule tag, f64 a, f64 b,
//!            u32 count, count × (first tensor, second tensor)
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, LrSchedule, OptimizerState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LFCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        self.params.push((name.into(), t.clone()));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint has no parameter {name:?}")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint header lacks {key:?}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta_str(key)?;
        raw.parse().map_err(|_| Error::Format(format!("bad value {raw:?} for {key:?}")))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        put_u32(w, self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            put_str(w, k)?;
            put_str(w, v)?;
        }
        put_u32(w, self.params.len() as u32)?;
        for (name, t) in &self.params {
            put_str(w, name)?;
            put_tensor(w, t)?;
        }
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(o) => {
                w.write_all(&[1])?;
                w.write_all(&o.step.to_le_bytes())?;
                for x in [o.config.lr, o.config.beta1, o.config.beta2, o.config.eps] {
                    put_f64(w, x)?;
                }
                let (tag, a, b) = match o.schedule {
                    LrSchedule::Constant => (0u8, 0.0, 0.0),
                    LrSchedule::StepLr { gamma, step_size } => (1, gamma, step_size as f64),
                    LrSchedule::CosineAnnealing { t_max, eta_min } => (2, t_max as f64, eta_min),
                };
                w.write_all(&[tag])?;
                put_f64(w, a)?;
                put_f64(w, b)?;
                put_u32(w, o.first.len() as u32)?;
                for (m, v) in o.first.iter().zip(&o.second) {
                    put_tensor(w, m)?;
                    put_tensor(w, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..get_u32(r)? {
            let k = get_str(r)?;
            let v = get_str(r)?;
            meta.insert(k, v);
        }
        let n = get_u32(r)?;
        let mut params = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = get_str(r)?;
            params.push((name, get_tensor(r)?));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let optimizer = match flag[0] {
            0 => None,
            1 => {
                let mut b8 = [0u8; 8];
                r.read_exact(&mut b8)?;
                let step = u64::from_le_bytes(b8);
                let config = AdamConfig { lr: get_f64(r)?, beta1: get_f64(r)?, beta2: get_f64(r)?, eps: get_f64(r)? };
                let mut tag = [0u8; 1];
                r.read_exact(&mut tag)?;
                let (a, b) = (get_f64(r)?, get_f64(r)?);
                let schedule = match tag[0] {
                    0 => LrSchedule::Constant,
                    1 => LrSchedule::StepLr { gamma: a, step_size: b as usize },
                    2 => LrSchedule::CosineAnnealing { t_max: a as usize, eta_min: b },
                    t => return Err(Error::Format(format!("unknown schedule tag {t}"))),
                };
                let count = get_u32(r)? as usize;
                let mut first = Vec::with_capacity(count);
                let mut second = Vec::with_capacity(count);
                for _ in 0..count {
                    first.push(get_tensor(r)?);
                    second.push(get_tensor(r)?);
                }
                Some(OptimizerState { config, schedule, first, second, step })
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        Ok(Self { meta, params, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

pub(crate) fn put_u32(w: &mut impl Write, x: u32) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_u64(w: &mut impl Write, x: u64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f64(w: &mut impl Write, x: f64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn put_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn put_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    put_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        put_u64(w, d as u64)?;
    }
    put_f64s(w, t.data())
}

pub(crate) fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Format("invalid UTF-8 string".into()))
}

pub(crate) fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut b = vec![0u8; n * 8];
    r.read_exact(&mut b)?;
    Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn get_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rank = get_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let shape = (0..rank).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let data = get_f64s(r, n)?;
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_optimizer() {
        let a = Tensor::matrix(2, 3, vec![1.0, -2.5, 3.25, 0.0, 1e-300, -7.0]).unwrap();
        let b = Tensor::vector(vec![0.125, f64::MIN_POSITIVE]);
        let mut opt = OptimizerState::new(
            AdamConfig::default(),
            LrSchedule::StepLr { gamma: 0.6, step_size: 200 },
            [&a, &b],
        );
        opt.step = 17;
        opt.first[0].data_mut()[1] = 0.5;
        let mut ck = Checkpoint::new().with_meta("kind", "test");
        ck.push("a", &a);
        ck.push("b", &b);
        ck.optimizer = Some(opt);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOTACKPT\x01\0\0\0".to_vec();
        assert!(matches!(Checkpoint::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn missing_param_is_reported() {
        let ck = Checkpoint::new();
        assert!(ck.get("nope").is_err());
    }
}
