//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "CAPSCKPT"
//! version   u32
//! digest    32 bytes SHA-256 of the config text
//! config    u32 length + UTF-8 canonical model config
//! blocks    u32 count, then per block:
//!             u32 name length, name, u8 kind (0 parameter, 1 frozen buffer,
//!             2 auxiliary), u32 rank, u64 per dimension, f64 values
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::parse_model_config;
use crate::data::Normalizer;
use crate::error::{DataError, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CAPSCKPT";
pub const VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;
const KIND_AUX: u8 = 2;
const NORM_MIN: &str = "normalizer.min";
const NORM_MAX: &str = "normalizer.max";

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub kind: u8,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub normalizer: Option<Normalizer>,
}

pub fn config_digest(config: &ModelConfig) -> [u8; 32] {
    Sha256::digest(config.canonical().as_bytes()).into()
}

impl Checkpoint {
    pub fn from_model(model: &Model, normalizer: Option<Normalizer>) -> Self {
        Checkpoint {
            config: model.config.clone(),
            params: model.params.clone(),
            normalizer,
        }
    }

    pub fn into_model(self) -> Result<(Model, Option<Normalizer>)> {
        let model = Model::with_params(self.config, &self.params)?;
        Ok((model, self.normalizer))
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut blocks: Vec<Block> = self
            .params
            .iter()
            .map(|p| Block {
                name: p.name.clone(),
                kind: if p.trainable { KIND_PARAM } else { KIND_BUFFER },
                value: p.value.clone(),
            })
            .collect();
        if let Some(n) = &self.normalizer {
            for (name, v) in [(NORM_MIN, &n.min), (NORM_MAX, &n.max)] {
                blocks.push(Block {
                    name: name.into(),
                    kind: KIND_AUX,
                    value: Tensor::from_parts(vec![v.len()], v.clone()),
                });
            }
        }
        blocks
    }

    /// Elements in trainable parameter blocks.
    pub fn parameter_elements(&self) -> usize {
        self.blocks()
            .iter()
            .filter(|b| b.kind == KIND_PARAM)
            .map(|b| b.value.len())
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config.canonical();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&config_digest(&self.config));
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let blocks = self.blocks();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for b in &blocks {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.push(b.kind);
            out.extend_from_slice(&(b.value.rank() as u32).to_le_bytes());
            for &d in b.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in b.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses checkpoint bytes; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            at: 0,
            path: path.to_path_buf(),
        };
        if r.take(8)? != MAGIC {
            return Err(r.bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.bad(&format!("unsupported version {version}")));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.bad("config text is not UTF-8"))?;
        if <[u8; 32]>::from(Sha256::digest(text.as_bytes())) != digest {
            return Err(r.bad("config digest mismatch"));
        }
        let config = parse_model_config(text).map_err(|e| r.bad(&format!("embedded config: {e}")))?;

        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let (mut min, mut max) = (None, None);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| r.bad("block name is not UTF-8"))?
                .to_string();
            let kind = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let elements = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let elements = elements
                .filter(|&e| e.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| r.bad(&format!("block {name} is truncated")))?;
            let data: Vec<f64> = r
                .take(elements * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value = Tensor::new(shape, data).map_err(|e| r.bad(&format!("block {name}: {e}")))?;
            match kind {
                KIND_PARAM | KIND_BUFFER => params
                    .insert(name.clone(), value, kind == KIND_PARAM)
                    .map_err(|e| r.bad(&e.to_string()))?,
                KIND_AUX if name == NORM_MIN => min = Some(value.into_data()),
                KIND_AUX if name == NORM_MAX => max = Some(value.into_data()),
                _ => return Err(r.bad(&format!("unexpected block {name} of kind {kind}"))),
            }
        }
        if r.remaining() != 0 {
            return Err(r.bad("trailing bytes"));
        }
        let normalizer = match (min, max) {
            (Some(min), Some(max)) if min.len() == max.len() => Some(Normalizer { min, max }),
            (None, None) => None,
            _ => return Err(r.bad("incomplete normalisation statistics")),
        };
        Ok(Checkpoint {
            config,
            params,
            normalizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    fn bad(&self, detail: &str) -> Error {
        DataError::Checkpoint {
            path: self.path.clone(),
            detail: detail.to_string(),
        }
        .into()
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.bad("unexpected end of file"));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
