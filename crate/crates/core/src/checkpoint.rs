//! Named-tensor binary container and model checkpoints.
//!
//! Layout (all integers 64-bit little-endian):
//!
//! ```text
//! magic "GSNTENS1" | tensor count
//! per tensor: name length | UTF-8 name | rank | dims[rank] | f64 values (LE)
//! ```
//!
//! A checkpoint is such a container plus a JSON sidecar (same path with a
//! `.json` extension) describing the architecture and hyperparameters.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataKind, Dataset};
use crate::error::{Error, Result};
use crate::gsn::{GsnModel, ModelSpec};
use crate::net::InitScheme;
use crate::random::seeded;
use crate::recon::Recon;
use crate::tensor::{Params, Tensor};

/// Leading bytes of every tensor container file.
pub const CONTAINER_MAGIC: &[u8; 8] = b"GSNTENS1";

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims().len() as u64).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("tensor container truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size does not fit in usize".into()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != CONTAINER_MAGIC {
        return Err(Error::Format("not a tensor container (bad magic)".into()));
    }
    let count = cur.usize()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = cur.usize()?;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.usize()?;
        let dims = (0..rank).map(|_| cur.usize()).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        let raw = cur.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(&dims, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(
            "trailing bytes after tensor container".into(),
        ));
    }
    Ok(out)
}

pub fn write_tensors<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    fs::write(path, encode_tensors(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// JSON sidecar of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelSpec,
    /// Autoregressive ordering when it is not the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<Vec<usize>>,
    /// Free-form hyperparameters recorded for provenance.
    #[serde(default)]
    pub hyperparameters: serde_json::Map<String, serde_json::Value>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &GsnModel,
    hyperparameters: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let named = model.tensors();
    write_tensors(path, named.iter().map(|(n, t)| (n.as_str(), *t)))?;
    let ordering = model
        .recon
        .ordering()
        .filter(|o| o.iter().enumerate().any(|(i, &v)| i != v))
        .map(<[usize]>::to_vec);
    let meta = CheckpointMeta {
        model: model.spec.clone(),
        ordering,
        hyperparameters,
    };
    let json = serde_json::to_string_pretty(&meta).expect("checkpoint metadata serializes");
    let side = sidecar_path(path);
    fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(GsnModel, CheckpointMeta)> {
    // tensors first, so a wrong file is reported as such rather than as a missing sidecar
    let mut stored = read_tensors(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    let mut spec = meta.model.clone();
    spec.init = InitScheme::Zeros;
    let mut model = GsnModel::new(spec, &mut seeded(0))?;
    model.spec.init = meta.model.init;
    if let Some(order) = &meta.ordering {
        match &mut model.recon {
            Recon::Nade(p) => p.set_ordering(order.clone())?,
            Recon::Rnade(p) => p.set_ordering(order.clone())?,
            _ => return Err(Error::Format("ordering given for a factorial model".into())),
        }
    }
    for (name, slot) in model.tensors_mut() {
        let idx = stored
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
        let (_, t) = stored.swap_remove(idx);
        if t.dims() != slot.dims() {
            return Err(Error::Format(format!(
                "tensor {name} has dims {:?}, model expects {:?}",
                t.dims(),
                slot.dims()
            )));
        }
        *slot = t;
    }
    if let Some((name, _)) = stored.first() {
        return Err(Error::Format(format!(
            "checkpoint has unexpected tensor {name}"
        )));
    }
    Ok((model, meta))
}

fn dataset_tensor_name(kind: DataKind) -> &'static str {
    match kind {
        DataKind::Binary => "dataset.binary",
        DataKind::Continuous => "dataset.continuous",
    }
}

/// Stores a dataset in the tensor container as one `[n × d]` tensor.
pub fn save_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let t = Tensor::from_vec(&[d.n_examples(), d.n_dims()], d.as_slice().to_vec())?;
    write_tensors(path, [(dataset_tensor_name(d.kind()), &t)])
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut tensors = read_tensors(path)?;
    if tensors.len() != 1 {
        return Err(Error::Format(format!(
            "{}: expected one dataset tensor",
            path.display()
        )));
    }
    let (name, t) = tensors.remove(0);
    let kind = match name.as_str() {
        "dataset.binary" => DataKind::Binary,
        "dataset.continuous" => DataKind::Continuous,
        other => {
            return Err(Error::Format(format!(
                "{}: unknown dataset tensor {other}",
                path.display()
            )))
        }
    };
    if t.dims().len() != 2 {
        return Err(Error::Format("dataset tensor must be rank 2".into()));
    }
    let n_dims = t.cols();
    Dataset::new(t.into_vec(), n_dims, kind)
}
