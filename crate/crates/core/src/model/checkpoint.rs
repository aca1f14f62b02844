//! Binary checkpoint container.
//!
//! ```text
//! "CSNN" | version u8 | json_len u32 | json | tensor* | crc32 u32
//! tensor = name_len u16 | name | dtype u8 (0 = f32) | rank u8 | dims u32* | f32 payload
//! ```
//!
//! All integers are little-endian; the CRC covers every byte after the magic.

use std::path::Path;

use chladni_neural::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EpochRecord, Model, ModelConfig, ModelError};

pub const MAGIC: &[u8; 4] = b"CSNN";
pub const FORMAT_VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("checkpoint truncated in {section}")]
    Truncated { section: String },
    #[error("tensor {tensor}: unsupported dtype {dtype}")]
    UnsupportedDtype { tensor: String, dtype: u8 },
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint does not match its config: {0}")]
    Mismatch(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    history: Vec<EpochRecord>,
    best_epoch: usize,
}

/// A trained model plus its training history.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn untrained(model: Model<f32>) -> Self {
        Self { model, history: Vec::new(), best_epoch: 0 }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header { model: self.model.config().clone(), history: self.history.clone(), best_epoch: self.best_epoch };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (name, tensor) in self.model.named_params() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(tensor.rank() as u8);
            for &d in tensor.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[MAGIC.len()..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        // The final four bytes are the checksum; tensors must end before them.
        let body_end = bytes.len().saturating_sub(4).max(MAGIC.len());
        let mut r = Reader { bytes: &bytes[..body_end], pos: MAGIC.len() };
        let version = r.take(1, "version")?[0];
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let json_len = r.u32("header length")? as usize;
        let header: Header = serde_json::from_slice(r.take(json_len, "header")?)?;

        let mut named = Vec::new();
        while r.pos < r.bytes.len() {
            let index = named.len();
            let label = |what: &str| format!("tensor #{index} {what}");
            let name_len = r.u16(&label("name length"))? as usize;
            let name = std::str::from_utf8(r.take(name_len, &label("name"))?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            let dtype = r.take(1, &name)?[0];
            if dtype != DTYPE_F32 {
                return Err(CheckpointError::UnsupportedDtype { tensor: name, dtype });
            }
            let rank = r.take(1, &name)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32(&name)? as usize);
            }
            let count: usize = dims.iter().product();
            let payload = r.take(count * 4, &name)?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let tensor = Tensor::new(dims, data).map_err(|e| CheckpointError::Mismatch(format!("{name}: {e}")))?;
            named.push((name, tensor));
        }

        let expected = header.model.parameter_shapes();
        if let Some((missing, _)) = expected.get(named.len()) {
            return Err(CheckpointError::Truncated { section: missing.clone() });
        }
        if bytes.len() < body_end + 4 {
            return Err(CheckpointError::Truncated { section: "checksum".into() });
        }
        let stored = u32::from_le_bytes(bytes[body_end..body_end + 4].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[MAGIC.len()..body_end]);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }
        let model = Model::from_parts(header.model, named).map_err(|e| match e {
            ModelError::Config(m) => CheckpointError::Mismatch(m),
            other => CheckpointError::Mismatch(other.to_string()),
        })?;
        Ok(Self { model, history: header.history, best_epoch: header.best_epoch })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated { section: section.to_string() });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, section: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    Checkpoint::from_bytes(&bytes)
}
