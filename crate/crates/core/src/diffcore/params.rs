use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FivesError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameters with matching gradient accumulators. Iteration order is
/// insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    params: Vec<CheckpointEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(FivesError::Contract(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.names.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    /// Adds `delta` into the gradient of `id` starting at flat `offset`.
    pub fn accumulate(&mut self, id: ParamId, offset: usize, delta: &[f64]) {
        let g = self.grads[id.0].data_mut();
        for (dst, src) in g[offset..offset + delta.len()].iter_mut().zip(delta) {
            *dst += src;
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn zero_grad_of(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.grads[id.0].data_mut().fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Copies values for every name present in `other` (shapes must agree).
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, value) in other.names.iter().zip(&other.values) {
            let id = self
                .id(name)
                .ok_or_else(|| FivesError::Lookup(format!("parameter {name:?} not in store")))?;
            if self.values[id.0].shape() != value.shape() {
                return Err(FivesError::Dimension {
                    left: self.values[id.0].shape().to_vec(),
                    right: value.shape().to_vec(),
                    context: "checkpoint parameter shape",
                });
            }
            self.values[id.0] = value.clone();
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, v)| CheckpointEntry {
                    name: n.clone(),
                    shape: v.shape().to_vec(),
                    values: v.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(FivesError::Format(format!(
                "unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        let mut store = Self::new();
        for e in ck.params {
            store.add(e.name, Tensor::new(e.shape, e.values)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
