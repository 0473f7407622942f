//! Flat binary checkpoints: a version header followed by
//! `(name, shape, f32 little-endian data)` records, parameters first and then
//! buffers, in registry order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::tensor::Real;

pub const MAGIC: &[u8; 4] = b"AFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn records<T: Real>(params: &ModelParams<T>) -> Vec<Record> {
    params
        .all()
        .map(|(name, t)| Record {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.f64() as f32).collect(),
        })
        .collect()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, records.len());
    for r in records {
        put_u32(&mut out, r.name.len());
        out.extend_from_slice(r.name.as_bytes());
        put_u32(&mut out, r.shape.len());
        for &e in &r.shape {
            put_u32(&mut out, e);
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Format {
                what: "checkpoint",
                detail: format!("truncated at byte {}", self.at),
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let bad = |detail: String| Error::Format {
        what: "checkpoint",
        detail,
    };
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| bad(e.to_string()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n.checked_mul(4).ok_or_else(|| bad("record too large".into()))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(Record { name, shape, data });
    }
    if r.at != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(out)
}

/// Overwrites every registered tensor from `records`; names and shapes must
/// match the registry exactly.
pub fn restore<T: Real>(params: &ModelParams<T>, records: &[Record]) -> Result<()> {
    let expected = params.all().count();
    if records.len() != expected {
        return Err(Error::Format {
            what: "checkpoint",
            detail: format!("{} records for a model with {expected} tensors", records.len()),
        });
    }
    for rec in records {
        let t = params.get(&rec.name).ok_or_else(|| Error::Format {
            what: "checkpoint",
            detail: format!("unknown tensor `{}`", rec.name),
        })?;
        if t.shape() != rec.shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "checkpoint_restore",
                lhs: t.shape().to_vec(),
                rhs: rec.shape.clone(),
            });
        }
        for (d, &v) in t.data_mut().iter_mut().zip(&rec.data) {
            *d = T::of(v as f64);
        }
    }
    Ok(())
}

pub fn save<T: Real>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    std::fs::write(path, encode(&records(params))).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<Record>> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
