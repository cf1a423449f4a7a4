//! Versioned binary checkpoints.
//!
//! ```text
//! magic "RNTC" | u32 version | u32 n | n bytes config JSON | u32 tensor count
//! per tensor: u32 name length | name | u32 rows | u32 cols | rows*cols f64
//! ```
//! All integers and floats little-endian; tensors row-major in
//! `Model::tensors` order.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RNTC";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        let tensors = self.tensors();
        let mut out = Vec::with_capacity(64 + 8 * self.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, m) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols as u32).to_le_bytes());
            for v in &m.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let config: ModelConfig =
            serde_json::from_slice(r.take(n)?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let mut model = Model::new(config)?;
        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        let count = r.u32()? as usize;
        if count != names.len() {
            return Err(Error::Format(format!("checkpoint has {count} tensors, model expects {}", names.len())));
        }
        for (expected, m) in names.iter().zip(model.tensors_mut()) {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Format(e.to_string()))?;
            if name != expected {
                return Err(Error::Format(format!("expected tensor {expected}, found {name}")));
            }
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if rows != m.rows || cols != m.cols {
                return Err(Error::Format(format!(
                    "tensor {name} is {rows}x{cols}, model expects {}x{}",
                    m.rows, m.cols
                )));
            }
            let raw = r.take(8 * rows * cols)?;
            for (v, chunk) in m.data.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        if !model.is_finite() {
            return Err(Error::Format("checkpoint contains non-finite weights".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
