//! Weight file format.
//!
//! ```text
//! "PCGW" | version u32 | fingerprint u64 | count u32
//! count × { name_len u32 | name | rank u32 | dims u32×rank | values f64×n | crc32 u32 }
//! crc32 u32 over every preceding byte
//! ```
//!
//! Integers and reals are little-endian. Each record checksum covers the
//! record from `name_len` through its last value.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::NetworkConfig;
use super::network::Model;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCGW";
pub const FORMAT_VERSION: u32 = 1;

/// Named tensors plus the fingerprint of the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub format_version: u32,
    pub fingerprint: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    pub fn from_model(model: &Model) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            fingerprint: model.config().fingerprint(),
            tensors: model
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let start = out.len();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let crc = crc32fast::hash(&out[start..]);
            out.extend_from_slice(&crc.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decodes and checks integrity, then checks the fingerprint against
    /// `expected` when given.
    pub fn from_bytes(bytes: &[u8], expected: Option<&NetworkConfig>) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptFile(msg.to_string());
        if bytes.len() < 24 {
            return Err(corrupt("file too short"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(corrupt("file checksum mismatch"));
        }
        if &body[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let format_version = r.u32()?;
        if format_version != FORMAT_VERSION {
            return Err(Error::CorruptFile(format!(
                "unsupported format version {format_version}"
            )));
        }
        let fingerprint = r.u64()?;
        if let Some(cfg) = expected {
            if cfg.fingerprint() != fingerprint {
                return Err(Error::FingerprintMismatch {
                    expected: cfg.fingerprint(),
                    found: fingerprint,
                });
            }
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let start = r.pos;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| corrupt("tensor too large"))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let end = r.pos;
            if crc32fast::hash(&body[start..end]) != r.u32()? {
                return Err(Error::CorruptFile(format!(
                    "record {name} checksum mismatch"
                )));
            }
            if tensors
                .insert(name.clone(), Tensor::new(shape, data)?)
                .is_some()
            {
                return Err(Error::CorruptFile(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            format_version,
            fingerprint,
            tensors,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptFile("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn save_weights(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    if model
        .params()
        .iter()
        .any(|p| p.value.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::ConfigInvalid(
            "refusing to save non-finite weights".into(),
        ));
    }
    fs::write(path, ModelWeights::from_model(model).to_bytes())?;
    Ok(())
}

/// Reads a weight file, requiring its fingerprint to match `cfg`.
pub fn load_weights(path: impl AsRef<Path>, cfg: &NetworkConfig) -> Result<ModelWeights> {
    ModelWeights::from_bytes(&fs::read(path)?, Some(cfg))
}

impl Model {
    /// Rebuilds a model from stored weights. Every tensor the architecture
    /// needs must be present with the right shape.
    pub fn from_weights(config: NetworkConfig, weights: &ModelWeights) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        model.copy_from(weights, false)?;
        Ok(model)
    }

    /// Copies every trunk tensor from `weights`, keeping the current head.
    pub fn load_trunk(&mut self, weights: &ModelWeights) -> Result<()> {
        self.copy_from(weights, true)
    }

    fn copy_from(&mut self, weights: &ModelWeights, trunk_only: bool) -> Result<()> {
        if weights.fingerprint != self.config().fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: self.config().fingerprint(),
                found: weights.fingerprint,
            });
        }
        for p in self.params_mut() {
            if trunk_only && Model::is_head_param(&p.name) {
                continue;
            }
            let t = weights
                .tensors
                .get(&p.name)
                .ok_or_else(|| Error::CorruptFile(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: stored {:?}, model {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}
