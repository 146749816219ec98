use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Real, Tensor, DTYPE};
use crate::error::{Error, Result};

pub type ParamId = usize;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

/// Named trainable tensors with gradient buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Vec<Real>>,
    index: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.grads.push(vec![0.0; value.len()]);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id]
    }

    /// Replaces a parameter's value, allowing a new shape.
    pub fn replace(&mut self, id: ParamId, value: Tensor) {
        self.grads[id] = vec![0.0; value.len()];
        self.values[id] = value;
    }

    pub fn grad(&self, id: ParamId) -> &[Real] {
        &self.grads[id]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [Real] {
        &mut self.grads[id]
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn accumulate(&mut self, grads: Vec<(ParamId, Vec<Real>)>) {
        for (id, g) in grads {
            for (a, b) in self.grads[id].iter_mut().zip(&g) {
                *a += b;
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, t)| (i, self.names[i].as_str(), t))
    }

    /// Copies every parameter of `other` into this set under `prefix + name`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) -> Result<()> {
        for (_, name, t) in other.iter() {
            self.add(format!("{prefix}{name}"), t.clone())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tower: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `manifest.json` and a little-endian `params.bin` into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    params: &ParamSet,
    config: serde_json::Value,
    tower: Option<serde_json::Value>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let mut tensors = Vec::with_capacity(params.len());
    let blob_path = dir.join(BLOB);
    let mut blob =
        BufWriter::new(File::create(&blob_path).map_err(|e| Error::io_at(&blob_path, e))?);
    let mut offset = 0u64;
    for (_, name, t) in params.iter() {
        for &x in t.data() {
            blob.write_all(&x.to_le_bytes())?;
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len() as u64,
        });
        offset += t.len() as u64;
    }
    blob.flush()?;
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dtype: DTYPE.to_string(),
        config,
        tower,
        tensors,
    };
    let path = dir.join(MANIFEST);
    let mut out = serde_json::to_vec_pretty(&manifest)?;
    out.push(b'\n');
    fs::write(&path, out).map_err(|e| Error::io_at(&path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Manifest, ParamSet)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let width = match manifest.dtype.as_str() {
        "f64" => 8,
        "f32" => 4,
        other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
    };
    let blob_path = dir.join(BLOB);
    let mut bytes = Vec::new();
    BufReader::new(File::open(&blob_path).map_err(|e| Error::io_at(&blob_path, e))?)
        .read_to_end(&mut bytes)?;
    let mut params = ParamSet::new();
    for e in &manifest.tensors {
        let start = e.offset as usize * width;
        let end = start + e.len as usize * width;
        if end > bytes.len() || e.shape.iter().product::<usize>() != e.len as usize {
            return Err(Error::Checkpoint(format!(
                "tensor {} out of bounds or misshaped",
                e.name
            )));
        }
        let data: Vec<Real> = bytes[start..end]
            .chunks_exact(width)
            .map(|c| {
                if width == 8 {
                    f64::from_le_bytes(c.try_into().unwrap()) as Real
                } else {
                    f32::from_le_bytes(c.try_into().unwrap()) as Real
                }
            })
            .collect();
        params.add(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
    }
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ps = ParamSet::new();
        ps.add("a", Tensor::from_fn(&[2, 3], |i| i as Real * 0.1 - 0.2))
            .unwrap();
        ps.add("b", Tensor::scalar(-7.5)).unwrap();
        save_checkpoint(dir.path(), &ps, serde_json::json!({"k": 1}), None).unwrap();
        let (m, back) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m.version, CHECKPOINT_VERSION);
        assert_eq!(m.tensors.len(), 2);
        for (id, name, t) in ps.iter() {
            assert_eq!(back.name(id), name);
            assert_eq!(back.get(id), t);
        }
    }

    #[test]
    fn zero_grad_resets() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::zeros(&[3])).unwrap();
        ps.accumulate(vec![(id, vec![1.0, 2.0, 3.0])]);
        assert_eq!(ps.grad(id), &[1.0, 2.0, 3.0]);
        ps.zero_grad();
        assert_eq!(ps.grad(id), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::zeros(&[1])).unwrap();
        assert!(ps.add("w", Tensor::zeros(&[1])).is_err());
    }
}
