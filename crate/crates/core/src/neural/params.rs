use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    value: Tensor2,
    m: Tensor2,
    v: Tensor2,
}

/// Named parameter tensors with Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradients aligned with a [`ParamStore`]; `None` for untouched parameters.
#[derive(Debug, Clone)]
pub struct Grads {
    pub(crate) params: Vec<Option<Tensor2>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor2> {
        self.params.get(id).and_then(Option::as_ref)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(Tensor2::is_finite)
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor2) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.to_string(),
            value,
            m: Tensor2::zeros(r, c),
            v: Tensor2::zeros(r, c),
        });
        Ok(self.params.len() - 1)
    }

    /// Weight matrix with uniform He-style fan-in scaling.
    pub fn add_weight<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<ParamId> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor2::from_vec(fan_in, fan_out, data)?)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, Tensor2::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.params[id].value
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    /// Copies parameter values (not optimizer state) from `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Shape("parameter stores differ in layout".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!("parameter {} differs in layout", a.name)));
            }
            a.value.data_mut().copy_from_slice(b.value.data());
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            params: vec![None; self.params.len()],
        }
    }

    /// One Adam update with bias correction. Moments that decay into the subnormal range are
    /// flushed to zero: rarely selected head columns would otherwise slow
    /// every later step by orders of magnitude.
    pub fn adam_step(&mut self, grads: &Grads, cfg: &AdamConfig) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (p, g) in self.params.iter_mut().zip(&grads.params) {
            let Some(g) = g else { continue };
            let value = p.value.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for i in 0..value.len() {
                m[i] = flush(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g.data()[i]);
                v[i] = flush(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g.data()[i] * g.data()[i]);
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                value[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Writes a versioned binary checkpoint: magic, JSON header with names
    /// and shapes, then little-endian values (and Adam moments if asked).
    pub fn save(&self, path: &Path, with_moments: bool) -> Result<()> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            step: self.step,
            moments: with_moments,
            tensors: self
                .params
                .iter()
                .map(|p| TensorHeader {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                })
                .collect(),
        };
        let head = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(16 + head.len() + self.num_values() * 8 * if with_moments { 3 } else { 1 });
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(head.len() as u64).to_le_bytes());
        buf.extend_from_slice(&head);
        for p in &self.params {
            let parts: &[&Tensor2] = if with_moments { &[&p.value, &p.m, &p.v] } else { &[&p.value] };
            for t in parts {
                for x in t.data() {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Config(format!("{}: {what}", path.display()));
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a parameter checkpoint"));
        }
        let head_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let head_end = 12usize.checked_add(head_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[12..head_end])?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {}", header.version)));
        }
        let mut values = bytes[head_end..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut store = ParamStore {
            params: Vec::new(),
            step: header.step,
        };
        for th in &header.tensors {
            let n = th.rows * th.cols;
            let mut take = || -> Result<Tensor2> {
                let data: Vec<f64> = values.by_ref().take(n).collect();
                if data.len() != n {
                    return Err(bad("truncated tensor data"));
                }
                Tensor2::from_vec(th.rows, th.cols, data)
            };
            let value = take()?;
            let (m, v) = if header.moments {
                (take()?, take()?)
            } else {
                (Tensor2::zeros(th.rows, th.cols), Tensor2::zeros(th.rows, th.cols))
            };
            store.params.push(Param {
                name: th.name.clone(),
                value,
                m,
                v,
            });
        }
        if values.next().is_some() {
            return Err(bad("trailing data"));
        }
        Ok(store)
    }
}

const MAGIC: &[u8; 4] = b"WSPK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    moments: bool,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

fn flush(x: f64) -> f64 {
    if x.is_subnormal() {
        0.0
    } else {
        x
    }
}
