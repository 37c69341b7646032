use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Result, Shape, Tensor, TensorError};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_store_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A trainable tensor with its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub momentum_buffer: Vec<f64>,
}

/// Non-trainable named state such as batchnorm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f64>,
}

/// Owns every parameter and buffer of one model.
///
/// Each store carries a process-unique id so gradients recorded on a graph
/// are only ever routed back to the store they were read from.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    params: Vec<Parameter>,
    buffers: Vec<Buffer>,
    by_name: HashMap<String, ParamId>,
    buffer_by_name: HashMap<String, BufferId>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            id: fresh_store_id(),
            params: self.params.clone(),
            buffers: self.buffers.clone(),
            by_name: self.by_name.clone(),
            buffer_by_name: self.buffer_by_name.clone(),
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: fresh_store_id(),
            params: Vec::new(),
            buffers: Vec::new(),
            by_name: HashMap::new(),
            buffer_by_name: HashMap::new(),
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) || self.buffer_by_name.contains_key(&name) {
            return Err(TensorError::DuplicateName(name));
        }
        let id = ParamId(self.params.len());
        let momentum_buffer = vec![0.0; tensor.shape().numel()];
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            tensor: tensor.with_requires_grad(true),
            momentum_buffer,
        });
        Ok(id)
    }

    pub fn add_buffer(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        data: Vec<f64>,
    ) -> Result<BufferId> {
        let name = name.into();
        if self.by_name.contains_key(&name) || self.buffer_by_name.contains_key(&name) {
            return Err(TensorError::DuplicateName(name));
        }
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        let id = BufferId(self.buffers.len());
        self.buffer_by_name.insert(name.clone(), id);
        self.buffers.push(Buffer { name, shape, data });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer {
        &mut self.buffers[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        self.buffer_by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer] {
        &mut self.buffers
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.shape().numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            *p.tensor.grad_slot() = None;
        }
    }

    /// Overwrites values by name from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let id = other
                .find(&p.name)
                .ok_or_else(|| TensorError::UnknownParameter(p.name.clone()))?;
            let src = other.get(id);
            if src.tensor.shape() != p.tensor.shape() {
                return Err(TensorError::Invalid(format!(
                    "parameter {:?} has shape {} but source has {}",
                    p.name,
                    p.tensor.shape(),
                    src.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(src.tensor.data());
            p.momentum_buffer.copy_from_slice(&src.momentum_buffer);
        }
        for b in &mut self.buffers {
            let id = other
                .find_buffer(&b.name)
                .ok_or_else(|| TensorError::UnknownParameter(b.name.clone()))?;
            b.data.copy_from_slice(&other.buffer(id).data);
        }
        Ok(())
    }
}

/// He-uniform initialization: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform(rng: &mut ChaCha8Rng, shape: Shape, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}
