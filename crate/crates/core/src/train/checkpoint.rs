// SPDX-License-Identifier: MIT OR Apache-2.0

//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LGLB"                      4-byte magic
//! version        u32          currently 1
//! section_count  u32
//! section*:
//!   kind         u8           0 = f64 tensor, 1 = UTF-8 JSON
//!   name_len     u32, name    UTF-8
//!   tensor:  ndim u32, dims u64 × ndim, payload f64 × Π dims
//!   json:    byte_len u64, bytes
//! checksum       u64          FNV-1a 64 over every preceding byte
//! ```
//!
//! The JSON section `meta` holds the configs, task family and counters.
//! Tensor sections are `param/<name>`, `adam_m/<name>` and `adam_v/<name>`
//! in [`ModelParams::named`] order.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::error::{LabError, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numeric::Tensor;
use crate::tasks::TaskFamily;

pub const MAGIC: &[u8; 4] = b"LGLB";
pub const FORMAT_VERSION: u32 = 1;

const KIND_TENSOR: u8 = 0;
const KIND_JSON: u8 = 1;

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub family: TaskFamily,
    pub params: ModelParams,
    /// Iterations completed; the next batch is derived from this counter.
    pub iteration: usize,
    pub optimizer: AdamState,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model_config: ModelConfig,
    train_config: TrainConfig,
    family: TaskFamily,
    iteration: usize,
    optimizer_step: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&Meta {
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            family: self.family.clone(),
            iteration: self.iteration,
            optimizer_step: self.optimizer.step,
        })?;
        let named = self.params.named();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&((1 + 3 * named.len()) as u32).to_le_bytes());

        put_name(&mut out, KIND_JSON, "meta");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);

        for (i, (name, t)) in named.iter().enumerate() {
            put_tensor(&mut out, &format!("param/{name}"), t.shape(), t.data());
            put_tensor(&mut out, &format!("adam_m/{name}"), t.shape(), &self.optimizer.m[i]);
            put_tensor(&mut out, &format!("adam_v/{name}"), t.shape(), &self.optimizer.v[i]);
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(LabError::Format("missing LGLB magic".into()));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(LabError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 20 {
            return Err(LabError::Format("truncated checkpoint".into()));
        }
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
        let computed = fnv1a(body);
        if stored != computed {
            return Err(LabError::Checksum { stored, computed });
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let count = r.u32()? as usize;
        let mut meta: Option<Meta> = None;
        let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        for _ in 0..count {
            let kind = r.u8()?;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| LabError::Format("section name is not UTF-8".into()))?
                .to_string();
            match kind {
                KIND_JSON => {
                    let len = r.u64()? as usize;
                    let text = r.take(len)?;
                    if name == "meta" {
                        meta = Some(serde_json::from_slice(text)?);
                    }
                }
                KIND_TENSOR => {
                    let ndim = r.u32()? as usize;
                    let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                    let numel = dims
                        .iter()
                        .try_fold(1usize, |a, &d| a.checked_mul(d))
                        .ok_or_else(|| LabError::Format(format!("section {name} is too large")))?;
                    let raw = r.take(numel.checked_mul(8).ok_or_else(|| LabError::Format("overflow".into()))?)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    tensors.insert(name, (dims, data));
                }
                other => return Err(LabError::Format(format!("unknown section kind {other}"))),
            }
        }
        if r.pos != body.len() {
            return Err(LabError::Format("trailing bytes after last section".into()));
        }
        let meta = meta.ok_or_else(|| LabError::Format("missing meta section".into()))?;
        meta.model_config.validate()?;

        let mut params = ModelParams::zeros(&meta.model_config)?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, slot) in params.named_mut() {
            let mut fetch = |prefix: &str| -> Result<Vec<f64>> {
                let key = format!("{prefix}/{name}");
                let (dims, data) = tensors
                    .remove(&key)
                    .ok_or_else(|| LabError::Format(format!("missing section {key}")))?;
                if dims != slot.shape() {
                    return Err(LabError::shape("load_checkpoint", slot.shape(), &dims));
                }
                Ok(data)
            };
            let p = fetch("param")?;
            m.push(fetch("adam_m")?);
            v.push(fetch("adam_v")?);
            *slot = Tensor::new(slot.shape().to_vec(), p)?;
        }
        Ok(Self {
            model_config: meta.model_config,
            train_config: meta.train_config,
            family: meta.family,
            params,
            iteration: meta.iteration,
            optimizer: AdamState {
                step: meta.optimizer_step,
                m,
                v,
            },
        })
    }
}

fn put_name(out: &mut Vec<u8>, kind: u8, name: &str) {
    out.push(kind);
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_name(out, KIND_TENSOR, name);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| LabError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| LabError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskConfig;
    use crate::train::Trainer;

    fn sample() -> Checkpoint {
        let cfg = TaskConfig::circle(3);
        let family = cfg.build(1).unwrap();
        let mut model = cfg.model_config();
        model.d_model = 8;
        model.d_mlp = 8;
        let train = crate::train::TrainConfig {
            iterations: 2,
            batch_size: 2,
            eval_every: 0,
            ..crate::train::TrainConfig::trajectory(4)
        };
        let mut t = Trainer::new(model, family, train).unwrap();
        t.run_until(1, |_| {}).unwrap();
        t.into_checkpoint()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn corruption_is_typed() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(LabError::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(LabError::Version { found: 9, .. })));
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(LabError::Checksum { .. })));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 20]).is_err());
    }
}
