//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "RELITCKP"
//! version   u32      = 1
//! meta_len  u32      length of the UTF-8 JSON metadata that follows
//! meta      bytes    model configuration
//! count     u32      number of tensors
//! repeated count times:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, dims u64 × ndim
//!   payload  f32 × prod(dims), row-major
//! ```

use std::path::Path;

use crate::backbone::layers::Module;
use crate::error::{Error, Result};
use crate::real::Real;

pub const MAGIC: &[u8; 8] = b"RELITCKP";
pub const VERSION: u32 = 1;

pub fn encode<T: Real, M: Module<T> + ?Sized>(meta: &str, module: &M) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    let mut count = 0u32;
    module.visit(&mut |_| count += 1);
    out.extend_from_slice(&count.to_le_bytes());
    module.visit(&mut |p| {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    });
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8"))
    }
}

/// A decoded checkpoint: metadata plus named tensors in file order.
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let meta_len = c.u32()? as usize;
    let meta = c.string(meta_len)?;
    let count = c.u32()?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = c.string(name_len)?;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = c.take(n * 4)?;
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push((name, shape, values));
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Ok(Checkpoint { meta, tensors })
}

impl Checkpoint {
    /// Copies tensors into `module`, matching by name and shape.
    pub fn apply<T: Real, M: Module<T> + ?Sized>(&self, module: &mut M, path: &Path) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        module.visit_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some((name, shape, values)) if *name == p.name && *shape == p.shape => {
                    for (dst, &src) in p.value.iter_mut().zip(values) {
                        *dst = T::lit(src as f64);
                    }
                }
                Some((name, shape, _)) => {
                    err = Some(Error::format(
                        path,
                        format!("tensor {name} {shape:?} does not match model parameter {} {:?}", p.name, p.shape),
                    ));
                }
                None => err = Some(Error::format(path, format!("missing tensor {}", p.name))),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.tensors.len() {
            return Err(Error::format(path, "checkpoint has extra tensors"));
        }
        Ok(())
    }
}

pub fn save<T: Real, M: Module<T> + ?Sized>(path: &Path, meta: &str, module: &M) -> Result<()> {
    std::fs::write(path, encode(meta, module)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
