use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schedule::ScheduleSpec;
use super::DiffusionError;
use crate::fusion::FusionKind;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"STMD1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    fusion_kind: FusionKind,
    schedule: ScheduleSpec,
    config_hash: String,
    step: u64,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// Named `f32` tensors plus the metadata needed to refuse mismatched loads.
///
/// Layout: `STMD1`, a little-endian `u32` header length, a JSON header, then
/// the little-endian `f32` payload in header order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fusion_kind: FusionKind,
    pub schedule: ScheduleSpec,
    pub config_hash: String,
    pub step: u64,
    pub vocab: Vec<String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let header = Header {
            version: VERSION,
            fusion_kind: self.fusion_kind,
            schedule: self.schedule,
            config_hash: self.config_hash.clone(),
            step: self.step,
            vocab: self.vocab.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(9 + json.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DiffusionError> {
        let bad = |m: String| DiffusionError::Checkpoint(m);
        if bytes.len() < 9 || &bytes[..5] != MAGIC {
            return Err(bad("missing STMD1 magic".into()));
        }
        let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let body = bytes.get(9..9 + len).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.version != VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        let payload = &bytes[9 + len..];
        if payload.len() % 4 != 0 {
            return Err(bad("payload is not a whole number of f32 values".into()));
        }
        let floats: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected = 0;
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected || e.offset + n > floats.len() {
                return Err(bad(format!("tensor {} has a bad offset", e.name)));
            }
            expected += n;
            let t = Tensor::new(e.shape, floats[e.offset..e.offset + n].to_vec())
                .map_err(|err| bad(format!("tensor {}: {err}", e.name)))?;
            tensors.push((e.name, t));
        }
        if expected != floats.len() {
            return Err(bad("payload has trailing values".into()));
        }
        Ok(Self {
            fusion_kind: header.fusion_kind,
            schedule: header.schedule,
            config_hash: header.config_hash,
            step: header.step,
            vocab: header.vocab,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffusionError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| DiffusionError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, DiffusionError> {
        let bytes = std::fs::read(path).map_err(|e| DiffusionError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
