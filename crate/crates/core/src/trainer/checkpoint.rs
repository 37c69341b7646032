//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `CFECKPT\0` |
//! | 4 | `u32` format version |
//! | 8 | `u64` header length `L` |
//! | L | UTF-8 JSON header |
//! | rest | every array's values as little-endian `f64`, in header order |
//!
//! The header holds the model kind, the completed step count, the model and
//! training configs, and an `arrays` table of `{name, role, shape, offset,
//! len}` where `offset` and `len` count `f64` values into the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cenet::{CENet, CENetConfig};
use crate::error::{Error, Result};
use crate::prnet::{PRNet, PRNetConfig};
use crate::tensor::{ParamStore, Shape};
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"CFECKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cenet,
    Prnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayRole {
    Param,
    Momentum,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub role: ArrayRole,
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "lowercase")]
pub enum ModelConfig {
    Cenet(CENetConfig),
    Prnet(PRNetConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Cenet(_) => ModelKind::Cenet,
            ModelConfig::Prnet(_) => ModelKind::Prnet,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Optimizer steps completed.
    pub step: u64,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    role: ArrayRole,
    shape: [usize; 4],
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    arrays: Vec<ArrayEntry>,
}

impl Checkpoint {
    pub fn capture(model: ModelConfig, train: TrainConfig, step: u64, store: &ParamStore) -> Self {
        let mut arrays = Vec::new();
        for p in store.params() {
            let shape = p.tensor.shape().dims();
            arrays.push(NamedArray {
                name: p.name.clone(),
                role: ArrayRole::Param,
                shape,
                data: p.tensor.data().to_vec(),
            });
            arrays.push(NamedArray {
                name: p.name.clone(),
                role: ArrayRole::Momentum,
                shape,
                data: p.momentum_buffer.clone(),
            });
        }
        for b in store.buffers() {
            arrays.push(NamedArray {
                name: b.name.clone(),
                role: ArrayRole::Buffer,
                shape: b.shape.dims(),
                data: b.data.clone(),
            });
        }
        Self {
            model,
            train,
            step,
            arrays,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    fn find(&self, name: &str, role: ArrayRole) -> Option<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name && a.role == role)
    }

    /// Copies parameters, momentum buffers and running statistics into a
    /// store with the same layout. Every array must be present and used.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let bad = |detail: String| Error::checkpoint("<memory>", detail);
        let expected = 2 * store.params().len() + store.buffers().len();
        if self.arrays.len() != expected {
            return Err(bad(format!(
                "holds {} arrays but the model needs {expected}",
                self.arrays.len()
            )));
        }
        let fetch = |name: &str, role: ArrayRole, shape: Shape| -> Result<&NamedArray> {
            let a = self
                .find(name, role)
                .ok_or_else(|| bad(format!("missing {role:?} array {name:?}")))?;
            if a.shape != shape.dims() {
                return Err(bad(format!(
                    "array {name:?} has shape {:?}, model expects {shape}",
                    a.shape
                )));
            }
            Ok(a)
        };
        let mut values = Vec::new();
        for p in store.params() {
            let shape = p.tensor.shape();
            values.push((
                fetch(&p.name, ArrayRole::Param, shape)?.data.clone(),
                fetch(&p.name, ArrayRole::Momentum, shape)?.data.clone(),
            ));
        }
        let mut buffers = Vec::new();
        for b in store.buffers() {
            buffers.push(fetch(&b.name, ArrayRole::Buffer, b.shape)?.data.clone());
        }
        for (p, (v, m)) in store.params_mut().iter_mut().zip(values) {
            p.tensor.data_mut().copy_from_slice(&v);
            p.momentum_buffer = m;
        }
        for (i, data) in buffers.into_iter().enumerate() {
            store.buffers_mut()[i].data = data;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|a| {
                let e = ArrayEntry {
                    name: a.name.clone(),
                    role: a.role,
                    shape: a.shape,
                    offset,
                    len: a.data.len(),
                };
                offset += a.data.len();
                e
            })
            .collect();
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.step,
            arrays,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: &str| Error::checkpoint(path, detail);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..data_start])
            .map_err(|e| bad(&format!("bad header: {e}")))?;
        let data = &bytes[data_start..];
        if !data.len().is_multiple_of(8) {
            return Err(bad("data section is not a whole number of f64 values"));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut expected_offset = 0;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let numel: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.len != numel || e.offset + e.len > values.len() {
                return Err(bad(&format!(
                    "array {:?} has an inconsistent table entry",
                    e.name
                )));
            }
            expected_offset += e.len;
            arrays.push(NamedArray {
                name: e.name,
                role: e.role,
                shape: e.shape,
                data: values[e.offset..e.offset + e.len].to_vec(),
            });
        }
        if expected_offset != values.len() {
            return Err(bad("trailing data after the last array"));
        }
        Ok(Self {
            model: header.model,
            train: header.train,
            step: header.step,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn to_cenet(&self) -> Result<CENet> {
        let ModelConfig::Cenet(config) = &self.model else {
            return Err(Error::checkpoint("<memory>", "expected a cenet checkpoint"));
        };
        let mut net = CENet::new(config.clone(), 0)?;
        self.restore_into(net.store_mut())?;
        Ok(net)
    }

    pub fn to_prnet(&self) -> Result<PRNet> {
        let ModelConfig::Prnet(config) = &self.model else {
            return Err(Error::checkpoint("<memory>", "expected a prnet checkpoint"));
        };
        let mut net = PRNet::new(config.clone(), 0)?;
        self.restore_into(net.store_mut())?;
        Ok(net)
    }
}
