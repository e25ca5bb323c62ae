//! Named trainable parameters, binding them onto a tape, and the on-disk
//! checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"DYCK" | version: u16 | manifest_len: u32 | manifest (UTF-8 JSON) | payload
//! ```
//!
//! The manifest lists every tensor with its name, shape, dtype and byte
//! offset into the payload, plus the seed, step counter and free-form
//! metadata. The payload is raw `f32` data.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use super::tape::{Tape, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DYCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
}

impl Param {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("param", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }
}

/// Ordered name → parameter map. Iteration order is lexicographic by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Param>,
    pub rng_seed: u64,
    pub step: u64,
    frozen: bool,
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    /// Sets every gradient to an all-zero buffer, so parameters a loss does
    /// not reach still take a (zero) optimizer step.
    pub fn zero_fill_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = Some(vec![0.0; p.data.len()]);
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[f32]) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if grad.len() != p.data.len() {
            return Err(Error::shape("accumulate_grad", &p.shape, &[grad.len()]));
        }
        let slot = p.grad.get_or_insert_with(|| vec![0.0; grad.len()]);
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
        Ok(())
    }

    /// Marks the store read-only for optimizers.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Copies values from `other` for every name present in both, checking
    /// shapes. Names missing from `other` are an error.
    pub fn load_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        for (name, p) in self.entries.iter_mut() {
            let src = other
                .entries
                .get(name)
                .ok_or_else(|| Error::format(0, format!("checkpoint lacks parameter `{name}`")))?;
            if src.shape != p.shape {
                return Err(Error::shape("load_values_from", &p.shape, &src.shape));
            }
            p.data.clone_from(&src.data);
        }
        Ok(())
    }
}

/// Puts parameters of one store onto a tape on demand, each at most once.
pub struct Binder<'a> {
    tape: Tape<f32>,
    store: &'a ParameterStore,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Tensor<f32>>>,
}

impl<'a> Binder<'a> {
    pub fn new(tape: &Tape<f32>, store: &'a ParameterStore, trainable: bool) -> Self {
        Self {
            tape: tape.clone(),
            store,
            trainable,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn tape(&self) -> &Tape<f32> {
        &self.tape
    }

    pub fn store(&self) -> &ParameterStore {
        self.store
    }

    pub fn get(&self, name: &str) -> Result<Tensor<f32>> {
        if let Some(t) = self.bound.borrow().get(name) {
            return Ok(t.clone());
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
        let t = self.tape.leaf(&p.shape, p.data.clone(), self.trainable)?;
        self.bound.borrow_mut().insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Gradients of every bound parameter after a backward pass. Bound
    /// parameters the loss did not reach report zeros.
    pub fn grads(&self) -> Vec<(String, Vec<f32>)> {
        self.bound
            .borrow()
            .iter()
            .map(|(name, t)| {
                let g = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
                (name.clone(), g)
            })
            .collect()
    }

    pub fn write_grads(&self, store: &mut ParameterStore) -> Result<()> {
        for (name, g) in self.grads() {
            store.accumulate_grad(&name, &g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    step: u64,
    frozen: bool,
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
    adam: Option<AdamManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamManifest {
    step: u64,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

/// Everything persisted for one model: parameters, optional optimizer
/// state, and string metadata (typically the model configuration).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub store: ParameterStore,
    pub adam: Option<AdamState>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, shape: &[usize], data: &[f32]| {
            tensors.push(TensorEntry {
                name,
                shape: shape.to_vec(),
                dtype: "f32".into(),
                offset: payload.len() as u64,
            });
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, p) in self.store.iter() {
            push(name.to_string(), &p.shape, &p.data);
        }
        let adam = self.adam.as_ref().map(|a| {
            for (name, m) in &a.m {
                push(format!("adam.m/{name}"), &[m.len()], m);
            }
            for (name, v) in &a.v {
                push(format!("adam.v/{name}"), &[v.len()], v);
            }
            AdamManifest {
                step: a.step,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
            }
        });
        let manifest = Manifest {
            seed: self.store.rng_seed,
            step: self.store.step,
            frozen: self.store.is_frozen(),
            metadata: self.metadata.clone(),
            tensors,
            adam,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::format(0, e.to_string()))?;
        let mut out = Vec::with_capacity(10 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(Error::format(0, "missing DYCK magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let mlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let body = bytes
            .get(10..10 + mlen)
            .ok_or_else(|| Error::format(6, "manifest length exceeds file size"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| Error::format(10, format!("bad manifest: {e}")))?;
        let payload = &bytes[10 + mlen..];
        let payload_base = (10 + mlen) as u64;

        let mut store = ParameterStore::new(manifest.seed);
        store.step = manifest.step;
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for entry in &manifest.tensors {
            if entry.dtype != "f32" {
                return Err(Error::format(10, format!("unsupported dtype `{}`", entry.dtype)));
            }
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let raw = payload.get(start..start + 4 * n).ok_or_else(|| {
                Error::format(payload_base + entry.offset, format!("tensor `{}` truncated", entry.name))
            })?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(name) = entry.name.strip_prefix("adam.m/") {
                m.insert(name.to_string(), data);
            } else if let Some(name) = entry.name.strip_prefix("adam.v/") {
                v.insert(name.to_string(), data);
            } else {
                store.insert(entry.name.clone(), Param::new(&entry.shape, data)?)?;
            }
        }
        if manifest.frozen {
            store.freeze();
        }
        let adam = manifest.adam.map(|a| AdamState {
            step: a.step,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            m,
            v,
        });
        Ok(Self {
            store,
            adam,
            metadata: manifest.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
