//! `TNT1` checkpoints: a JSON config record followed by named f32 tensors,
//! all little-endian.
//!
//! ```text
//! "TNT1" | u32 record_len | record (UTF-8 JSON) | u32 count |
//!   count × ( u32 name_len | name | u32 rank | rank × u64 dim | f32 data )
//! ```

use serde::{Deserialize, Serialize};
use trn_ood_core::model::{GcnConfig, ParamSet, TntConfig};
use trn_ood_core::Tensor;

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"TNT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelRecord {
    Tnt { config: TntConfig },
    Gcn { config: GcnConfig, d: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub num_classes: usize,
    #[serde(flatten)]
    pub model: ModelRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamSet<f32>,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(format!("checkpoint: {}", msg.into()))
}

struct Cursor<'b> {
    buf: &'b [u8],
    at: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take(8)?.try_into().unwrap())).map_err(|_| bad("dimension overflow"))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let record = serde_json::to_vec(&self.header).expect("serializable header");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(record.len() as u32).to_le_bytes());
        out.extend_from_slice(&record);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, at: 0 };
        if c.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let len = c.u32()?;
        let header: CheckpointHeader =
            serde_json::from_slice(c.take(len)?).map_err(|e| bad(format!("config record: {e}")))?;
        let count = c.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = c.u32()?;
            let name = std::str::from_utf8(c.take(len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rank = c.u32()?;
            let shape = (0..rank).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow"))?;
            let bytes = c.take(numel.checked_mul(4).ok_or_else(|| bad("shape overflow"))?)?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if params.index_of(name).is_some() {
                return Err(bad(format!("duplicate tensor {name}")));
            }
            params.insert(name, Tensor::new(&shape, data)?);
        }
        if c.at != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { header, params })
    }
}
