//! Binary and JSON encodings of lattices and masks.
//!
//! Binary lattice record, all integers and doubles little-endian:
//!
//! ```text
//! magic   4 bytes  "RNTL"
//! version u32      1
//! T       u32
//! U       u32
//! label   T*U     f64, row-major (frame, label index)
//! blank   T*(U+1) f64, row-major
//! ```
//!
//! Binary mask record:
//!
//! ```text
//! magic   4 bytes  "RNTM"
//! version u32      1
//! T, U, delta_t, delta_u   u32 each
//! label   T*U     bytes, 0 or 1
//! blank   T*(U+1) bytes, 0 or 1
//! ```
//!
//! The JSON form is for debugging: matrices as nested arrays with `null`
//! standing for log 0.

use serde::{Deserialize, Serialize};

use super::{ConstraintMask, Lattice};
use crate::error::{Error, Result};
use crate::logspace::LOG_ZERO;

pub const LATTICE_MAGIC: [u8; 4] = *b"RNTL";
pub const MASK_MAGIC: [u8; 4] = *b"RNTM";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("record truncated at byte {}", self.pos)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported record version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn dim(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))
}

impl Lattice {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + 8 * (self.label_matrix().len() + self.blank_matrix().len()));
        out.extend_from_slice(&LATTICE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&dim(self.frames())?);
        out.extend_from_slice(&dim(self.labels())?);
        for v in self.label_matrix().iter().chain(self.blank_matrix()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        r.header(LATTICE_MAGIC)?;
        let nt = r.u32()? as usize;
        let nu = r.u32()? as usize;
        let label = (0..nt * nu).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let blank = (0..nt * (nu + 1)).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Lattice::new(nt, nu, label, blank)
    }

    pub fn to_json(&self) -> Result<String> {
        let rows = |data: &[f64], width: usize| -> Vec<Vec<Option<f64>>> {
            if width == 0 {
                return vec![Vec::new(); self.frames()];
            }
            data.chunks(width)
                .map(|row| row.iter().map(|&v| (v != LOG_ZERO).then_some(v)).collect())
                .collect()
        };
        let doc = LatticeJson {
            frames: self.frames(),
            labels: self.labels(),
            label_logprob: rows(self.label_matrix(), self.labels()),
            blank_logprob: rows(self.blank_matrix(), self.labels() + 1),
        };
        serde_json::to_string(&doc).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LatticeJson = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let flat = |rows: Vec<Vec<Option<f64>>>| -> Vec<f64> {
            rows.into_iter().flatten().map(|v| v.unwrap_or(LOG_ZERO)).collect()
        };
        Lattice::new(doc.frames, doc.labels, flat(doc.label_logprob), flat(doc.blank_logprob))
    }
}

#[derive(Serialize, Deserialize)]
struct LatticeJson {
    frames: usize,
    labels: usize,
    label_logprob: Vec<Vec<Option<f64>>>,
    blank_logprob: Vec<Vec<Option<f64>>>,
}

impl ConstraintMask {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MASK_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [self.frames(), self.labels(), self.delta_t(), self.delta_u()] {
            out.extend_from_slice(&dim(v)?);
        }
        out.extend(self.label_mask().iter().chain(self.blank_mask()).map(|&b| u8::from(b)));
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        r.header(MASK_MAGIC)?;
        let nt = r.u32()? as usize;
        let nu = r.u32()? as usize;
        let dt = r.u32()? as usize;
        let du = r.u32()? as usize;
        let bools = |bytes: &[u8]| -> Result<Vec<bool>> {
            bytes
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Format(format!("mask byte {other} is not 0 or 1"))),
                })
                .collect()
        };
        let label = bools(r.take(nt * nu)?)?;
        let blank = bools(r.take(nt * (nu + 1))?)?;
        r.finish()?;
        ConstraintMask::from_parts(nt, nu, dt, du, label, blank)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ConstraintMask = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        ConstraintMask::from_parts(
            m.frames(),
            m.labels(),
            m.delta_t(),
            m.delta_u(),
            m.label_mask().to_vec(),
            m.blank_mask().to_vec(),
        )
    }
}
