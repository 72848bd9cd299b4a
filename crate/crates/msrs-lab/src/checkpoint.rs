//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  "MSRS" (4 bytes)
//! version u32
//! model section:     count u64, then per tensor:
//!                      name_len u32, name (UTF-8), ndim u32,
//!                      dims u64 each, data f64 each
//! optimizer section: count u64, tensors in the same encoding
//! counter section:   count u64, then per counter:
//!                      name_len u32, name (UTF-8), value f64
//! ```
//!
//! Round-trips are bit-exact; truncated or malformed files are rejected with
//! the offending byte offset.

use std::path::Path;

use crate::error::{LabError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MSRS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub model: Vec<(String, Tensor)>,
    pub optimizer: Vec<(String, Tensor)>,
    pub counters: Vec<(String, f64)>,
}

impl Checkpoint {
    pub fn counter(&self, name: &str) -> Option<f64> {
        self.counters
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn model_tensor(&self, name: &str) -> Option<&Tensor> {
        self.model.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn optimizer_tensor(&self, name: &str) -> Option<&Tensor> {
        self.optimizer
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(ckpt.model.len() as u64).to_le_bytes());
    for (name, t) in &ckpt.model {
        put_tensor(&mut buf, name, t);
    }
    buf.extend_from_slice(&(ckpt.optimizer.len() as u64).to_le_bytes());
    for (name, t) in &ckpt.optimizer {
        put_tensor(&mut buf, name, t);
    }
    buf.extend_from_slice(&(ckpt.counters.len() as u64).to_le_bytes());
    for (name, v) in &ckpt.counters {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(LabError::Checkpoint(format!(
                "truncated: expected {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| LabError::Checkpoint(format!("invalid UTF-8 name at offset {at}")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.name()?;
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        let t = Tensor::new(shape, data)
            .map_err(|e| LabError::Checkpoint(format!("tensor '{name}': {e}")))?;
        Ok((name, t))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(LabError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(LabError::Checkpoint(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let mut ckpt = Checkpoint::default();
    let model_count = r.u64()?;
    for _ in 0..model_count {
        ckpt.model.push(r.tensor()?);
    }
    let opt_count = r.u64()?;
    for _ in 0..opt_count {
        ckpt.optimizer.push(r.tensor()?);
    }
    let counter_count = r.u64()?;
    for _ in 0..counter_count {
        let name = r.name()?;
        let value = r.f64()?;
        ckpt.counters.push((name, value));
    }
    if r.pos != buf.len() {
        return Err(LabError::Checkpoint(format!(
            "trailing garbage: {} bytes past offset {}",
            buf.len() - r.pos,
            r.pos
        )));
    }
    Ok(ckpt)
}
