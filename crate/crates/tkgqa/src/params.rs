//! Named parameter buffers shared across training steps, an SGD update
//! rule, and the checkpoint format (text manifest plus flat little-endian
//! double arrays in manifest order).

use crate::numerics::{Result as NumResult, Tape, Tensor};
use indexmap::IndexMap;
use rand::Rng;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug)]
pub struct ParamBuf {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered collection of named parameters. Insertion order is the
/// checkpoint serialization order and the SGD update order.
#[derive(Clone, Default)]
pub struct ParamSet {
    entries: IndexMap<String, ParamBuf>,
    /// Extra manifest metadata persisted with checkpoints.
    pub meta: BTreeMap<String, String>,
}

/// Per-step view of a `ParamSet` bound onto one tape as leaf tensors.
pub struct BoundParams {
    tensors: IndexMap<String, Tensor>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        self.entries.insert(name.to_string(), ParamBuf { shape, values });
    }

    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        scale: f64,
        rng: &mut impl Rng,
    ) {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        self.insert(name, shape, values);
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![0.0; n]);
    }

    pub fn get(&self, name: &str) -> &ParamBuf {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamBuf {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Bind every parameter onto `tape`. Names accepted by `trainable`
    /// become gradient-receiving leaves.
    pub fn bind(&self, tape: &Tape, trainable: impl Fn(&str) -> bool) -> NumResult<BoundParams> {
        let mut tensors = IndexMap::new();
        for (name, buf) in &self.entries {
            let t = tape.leaf(&buf.shape, buf.values.clone(), trainable(name))?;
            tensors.insert(name.clone(), t);
        }
        Ok(BoundParams { tensors })
    }

    /// Like [`bind`](Self::bind), but names listed in `overrides` map to
    /// the given already-recorded tensors instead of fresh leaves. Used
    /// by gradient checks that substitute probe values for a parameter.
    pub fn bind_with_overrides(
        &self,
        tape: &Tape,
        trainable: impl Fn(&str) -> bool,
        overrides: &[(&str, &Tensor)],
    ) -> NumResult<BoundParams> {
        let mut tensors = IndexMap::new();
        for (name, buf) in &self.entries {
            if let Some((_, t)) = overrides.iter().find(|(n, _)| n == name) {
                tensors.insert(name.clone(), (*t).clone());
                continue;
            }
            let t = tape.leaf(&buf.shape, buf.values.clone(), trainable(name))?;
            tensors.insert(name.clone(), t);
        }
        Ok(BoundParams { tensors })
    }

    /// Plain SGD: subtract `lr` times the gradient accumulated on the
    /// bound tensors. Parameters without gradients are left untouched.
    pub fn apply_sgd(&mut self, bound: &BoundParams, lr: f64) {
        for (name, tensor) in bound.iter() {
            if let Some(grad) = tensor.grad() {
                let buf = self.entries.get_mut(name).expect("bound param exists");
                for (v, g) in buf.values.iter_mut().zip(&grad) {
                    *v -= lr * g;
                }
            }
        }
    }

    /// Subtract `lr` times an externally accumulated gradient map
    /// (used for gradient accumulation across a batch of tapes).
    pub fn apply_sgd_accumulated(&mut self, grads: &IndexMap<String, Vec<f64>>, lr: f64) {
        for (name, grad) in grads {
            let buf = self.entries.get_mut(name).expect("accumulated param exists");
            for (v, g) in buf.values.iter_mut().zip(grad) {
                *v -= lr * g;
            }
        }
    }

    /// Write `manifest.txt` (key=value lines; `param.<i>` entries record
    /// name and shape in order) and `params.bin` (flat little-endian f64).
    pub fn save(&self, dir: &Path) -> Result<(), CheckpointError> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (k, v) in &self.meta {
            manifest.push_str(&format!("{k}={v}\n"));
        }
        for (i, (name, buf)) in self.entries.iter().enumerate() {
            let dims: Vec<String> = buf.shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("param.{i}={name}:{}\n", dims.join("x")));
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        let mut bin = std::fs::File::create(dir.join("params.bin"))?;
        for buf in self.entries.values() {
            for v in &buf.values {
                bin.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let mut meta = BTreeMap::new();
        let mut params: Vec<(usize, String, Vec<usize>)> = Vec::new();
        for line in manifest.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::Format(format!("bad manifest line: {line}")))?;
            if let Some(idx) = key.strip_prefix("param.") {
                let idx: usize = idx
                    .parse()
                    .map_err(|_| CheckpointError::Format(format!("bad param index: {key}")))?;
                let (name, dims) = value.split_once(':').ok_or_else(|| {
                    CheckpointError::Format(format!("bad param entry: {value}"))
                })?;
                let shape: Vec<usize> = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| CheckpointError::Format(format!("bad shape: {dims}")))?;
                params.push((idx, name.to_string(), shape));
            } else {
                meta.insert(key.to_string(), value.to_string());
            }
        }
        params.sort_by_key(|(i, _, _)| *i);
        let mut bin = std::fs::File::open(dir.join("params.bin"))?;
        let mut entries = IndexMap::new();
        for (_, name, shape) in params {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            bin.read_exact(&mut bytes).map_err(|e| {
                CheckpointError::Format(format!("params.bin truncated at {name}: {e}"))
            })?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.insert(name, ParamBuf { shape, values });
        }
        let mut trailing = Vec::new();
        bin.read_to_end(&mut trailing)?;
        if !trailing.is_empty() {
            return Err(CheckpointError::Format(format!(
                "params.bin has {} trailing bytes",
                trailing.len()
            )));
        }
        Ok(Self { entries, meta })
    }
}
