//! Single-file checkpoints: `OCTSEGCK` magic, `u32` schema version, `u64` header
//! length, a JSON header (kind, config, training position, RNG state, tensor
//! table), then raw little-endian tensors in table order.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnyNet, Cdae, CdaeConfig, NetKind, UNet, UNetConfig, VolumetricNet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OCTSEGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: NetKind,
    dtype: String,
    config: serde_json::Value,
    epoch: usize,
    step: u64,
    rng: Option<ChaCha8Rng>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct NetworkCheckpoint<T> {
    pub kind: NetKind,
    pub config: serde_json::Value,
    pub epoch: usize,
    pub step: u64,
    pub rng: Option<ChaCha8Rng>,
    pub tensors: Vec<NamedTensor<T>>,
}

impl<T: Scalar> NetworkCheckpoint<T> {
    pub fn capture<N: VolumetricNet<T> + ?Sized>(net: &N, epoch: usize, step: u64, rng: Option<ChaCha8Rng>) -> Self {
        Self {
            kind: net.kind(),
            config: net.config_json(),
            epoch,
            step,
            rng,
            tensors: net
                .params()
                .into_iter()
                .map(|p| NamedTensor { name: p.name.clone(), shape: p.shape.clone(), data: p.value.clone() })
                .collect(),
        }
    }

    /// Copies stored tensors into `net`; names and shapes must match exactly.
    pub fn apply_to<N: VolumetricNet<T> + ?Sized>(&self, net: &mut N) -> Result<()> {
        if net.kind() != self.kind {
            return Err(Error::Checkpoint(format!("checkpoint holds a {:?}, network is a {:?}", self.kind, net.kind())));
        }
        let mut params = net.params_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!("{} stored tensors, network has {}", self.tensors.len(), params.len())));
        }
        for (p, t) in params.iter_mut().zip(&self.tensors) {
            if p.name != t.name || p.shape != t.shape {
                return Err(Error::Checkpoint(format!("tensor {} {:?} does not match {} {:?}", t.name, t.shape, p.name, p.shape)));
            }
            p.value.clone_from(&t.data);
        }
        Ok(())
    }

    /// Rebuilds the network described by the stored config and loads its weights.
    pub fn restore(&self) -> Result<AnyNet<T>> {
        let mut net = match self.kind {
            NetKind::UNet => AnyNet::UNet(UNet::new(serde_json::from_value::<UNetConfig>(self.config.clone())?, 0)?),
            NetKind::Cdae => AnyNet::Cdae(Cdae::new(serde_json::from_value::<CdaeConfig>(self.config.clone())?, 0)?),
        };
        self.apply_to(net.as_dyn_mut())?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for t in &self.tensors {
            entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset, len: t.data.len() });
            offset += t.data.len() * T::BYTES;
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            dtype: T::DTYPE.to_string(),
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: self.rng.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for &v in &t.data {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("missing checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
        };
        let payload = &bytes[20 + hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let raw = payload
                .get(e.offset..e.offset + e.len * width)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} exceeds payload", e.name)))?;
            let data = if width == 4 {
                raw.chunks_exact(4).map(|c| T::c(f32::read_le(c) as f64)).collect()
            } else {
                raw.chunks_exact(8).map(|c| T::c(f64::read_le(c))).collect()
            };
            tensors.push(NamedTensor { name: e.name, shape: e.shape, data });
        }
        Ok(Self { kind: header.kind, config: header.config, epoch: header.epoch, step: header.step, rng: header.rng, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
