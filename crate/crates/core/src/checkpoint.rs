//! Checkpoint container: magic "OSPG", a format version, and a table of
//! named float32 tensors, all little-endian. Loading validates magic,
//! version and every size before any tensor is handed out; errors carry the
//! byte offset where validation failed. save -> load round-trips the f32
//! payload bit-exactly.

use std::path::Path;

use thiserror::Error;

use crate::model::SpeechModel;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"OSPG";
pub const FORMAT_VERSION: u32 = 1;
/// dtype code 0: little-endian IEEE 754 binary32.
pub const DTYPE_F32: u32 = 0;

const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic at offset 0: found {found:?}, expected \"OSPG\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found} at offset 4, expected {expected}")]
    BadVersion { found: u32, expected: u32 },
    #[error("file truncated at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("implausible {what} {value} at offset {offset}")]
    BadField {
        what: &'static str,
        value: u64,
        offset: usize,
    },
    #[error("tensor name at offset {offset} is not valid UTF-8")]
    BadName { offset: usize },
    #[error("unsupported dtype code {code} at offset {offset}")]
    BadDtype { code: u32, offset: usize },
    #[error("duplicate tensor name {name:?}")]
    DuplicateName { name: String },
    #[error("{extra} trailing bytes after the last tensor at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("checkpoint is missing tensor {name:?}")]
    MissingTensor { name: String },
    #[error("checkpoint has unexpected tensor {name:?}")]
    UnexpectedTensor { name: String },
    #[error("tensor {name:?}: file dims {file:?} do not match model dims {model:?}")]
    ShapeMismatch {
        name: String,
        file: Vec<u32>,
        model: Vec<usize>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    /// Snapshot of named tensors, values cast to f32.
    pub fn from_named_tensors(named: &[(String, Tensor)]) -> Checkpoint {
        let entries = named
            .iter()
            .map(|(name, t)| CheckpointEntry {
                name: name.clone(),
                dims: t.shape().iter().map(|&d| d as u32).collect(),
                data: t.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Checkpoint { entries }
    }

    pub fn of_model(model: &SpeechModel) -> Checkpoint {
        Checkpoint::from_named_tensors(&model.named_tensors())
    }

    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Drop every tensor under a name prefix (e.g. "lora." after merging).
    pub fn without_prefix(&self, prefix: &str) -> Checkpoint {
        Checkpoint {
            entries: self
                .entries
                .iter()
                .filter(|e| !e.name.starts_with(prefix))
                .cloned()
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&DTYPE_F32.to_le_bytes());
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            if *off + n > bytes.len() {
                return Err(CheckpointError::Truncated {
                    offset: *off,
                    needed: *off + n - bytes.len(),
                });
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        let read_u32 = |off: &mut usize| -> Result<u32, CheckpointError> {
            let s = take(off, 4)?;
            Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        };

        let magic = take(&mut off, 4)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic {
                found: [magic[0], magic[1], magic[2], magic[3]],
            });
        }
        let version = read_u32(&mut off)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::BadVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let count = read_u32(&mut off)?;
        let mut entries = Vec::with_capacity(count as usize);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..count {
            let name_off = off;
            let name_len = read_u32(&mut off)?;
            if name_len == 0 || name_len > MAX_NAME_LEN {
                return Err(CheckpointError::BadField {
                    what: "name length",
                    value: name_len as u64,
                    offset: name_off,
                });
            }
            let name_bytes = take(&mut off, name_len as usize)?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| CheckpointError::BadName { offset: name_off + 4 })?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::DuplicateName { name });
            }
            let rank_off = off;
            let rank = read_u32(&mut off)?;
            if rank > MAX_RANK {
                return Err(CheckpointError::BadField {
                    what: "rank",
                    value: rank as u64,
                    offset: rank_off,
                });
            }
            let mut dims = Vec::with_capacity(rank as usize);
            let mut elements: u64 = 1;
            for _ in 0..rank {
                let d = read_u32(&mut off)?;
                dims.push(d);
                elements = elements.saturating_mul(d as u64);
            }
            if elements > MAX_ELEMENTS {
                return Err(CheckpointError::BadField {
                    what: "element count",
                    value: elements,
                    offset: rank_off,
                });
            }
            let dtype_off = off;
            let dtype = read_u32(&mut off)?;
            if dtype != DTYPE_F32 {
                return Err(CheckpointError::BadDtype {
                    code: dtype,
                    offset: dtype_off,
                });
            }
            let raw = take(&mut off, elements as usize * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(CheckpointEntry { name, dims, data });
        }
        if off != bytes.len() {
            return Err(CheckpointError::TrailingBytes {
                offset: off,
                extra: bytes.len() - off,
            });
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Copy values into an existing model. The name sets must match
    /// exactly and every shape must agree; nothing is written on error.
    pub fn load_into_model(&self, model: &SpeechModel) -> Result<(), CheckpointError> {
        self.load_into_model_with(model, None)
    }

    /// Like [`Checkpoint::load_into_model`], but tensors under
    /// `optional_prefix` may be absent from the file. A merged checkpoint
    /// drops the `lora.` group; the freshly initialized adapters have
    /// zeroed B factors, so they contribute nothing until trained.
    pub fn load_into_model_with(
        &self,
        model: &SpeechModel,
        optional_prefix: Option<&str>,
    ) -> Result<(), CheckpointError> {
        let named = model.named_tensors();
        let mut plan: Vec<(&CheckpointEntry, &Tensor)> = Vec::with_capacity(named.len());
        for (name, tensor) in &named {
            let entry = match self.entry(name) {
                Some(e) => e,
                None if optional_prefix.is_some_and(|p| name.starts_with(p)) => continue,
                None => return Err(CheckpointError::MissingTensor { name: name.clone() }),
            };
            let model_dims: Vec<usize> = tensor.shape().to_vec();
            let file_dims: Vec<usize> = entry.dims.iter().map(|&d| d as usize).collect();
            if model_dims != file_dims {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    file: entry.dims.clone(),
                    model: model_dims,
                });
            }
            plan.push((entry, tensor));
        }
        for e in &self.entries {
            if !named.iter().any(|(n, _)| n == &e.name) {
                return Err(CheckpointError::UnexpectedTensor {
                    name: e.name.clone(),
                });
            }
        }
        for (entry, tensor) in plan {
            let values: Vec<f64> = entry.data.iter().map(|&v| v as f64).collect();
            tensor.set_data(&values);
        }
        Ok(())
    }
}
