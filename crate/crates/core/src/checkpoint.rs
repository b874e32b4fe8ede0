//! Named-tensor checkpoint container.
//!
//! Little endian: `"HFGC"`, `u32` version, `u32` entry count, then per entry
//! a `u16` name length, the UTF-8 name, `u32` rank, `rank` × `u32` dims and
//! the `f32` values.

use std::collections::HashMap;
use std::path::Path;

use crate::audio::write_atomic;
use crate::error::{Error, Result};
use crate::nn::Parameter;
use crate::tensor::Float;

const MAGIC: &[u8; 4] = b"HFGC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        self.entries.push(Entry {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    /// Appends the current values of `params`.
    pub fn extend<T: Float>(&mut self, params: &[Parameter<T>]) {
        for p in params {
            let data = p.tensor.data().iter().map(|v| v.as_f64() as f32).collect();
            self.push(p.name.clone(), p.tensor.shape(), data);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| corrupt(format!("name too long: {}", e.name)))?;
            if e.shape.iter().product::<usize>() != e.data.len() {
                return Err(corrupt(format!(
                    "{}: shape {:?} holds {} values",
                    e.name,
                    e.shape,
                    e.data.len()
                )));
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(corrupt("missing HFGC header"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| corrupt("name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt(format!("{name}: dims overflow")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt("dims overflow"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(Entry { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }

    /// Copies entries into `targets`. Every target must be present with the
    /// same shape, and every entry whose name starts with one of `scopes`
    /// must belong to a target.
    pub fn restore<T: Float>(&self, targets: &[Parameter<T>], scopes: &[&str]) -> Result<()> {
        let by_name: HashMap<&str, &Entry> =
            self.entries.iter().map(|e| (e.name.as_str(), e)).collect();
        let wanted: HashMap<&str, &Parameter<T>> =
            targets.iter().map(|p| (p.name.as_str(), p)).collect();
        if let Some(e) = self.entries.iter().find(|e| {
            scopes.iter().any(|s| e.name.starts_with(s)) && !wanted.contains_key(e.name.as_str())
        }) {
            return Err(corrupt(format!("unknown entry {}", e.name)));
        }
        for p in targets {
            let e = by_name
                .get(p.name.as_str())
                .ok_or_else(|| corrupt(format!("missing entry {}", p.name)))?;
            if e.shape != p.tensor.shape() {
                return Err(corrupt(format!(
                    "{}: shape {:?} in file, model expects {:?}",
                    p.name,
                    e.shape,
                    p.tensor.shape()
                )));
            }
        }
        for p in targets {
            let e = by_name[p.name.as_str()];
            let mut d = p.tensor.data_mut();
            for (dst, &src) in d.iter_mut().zip(&e.data) {
                *dst = T::of(src as f64);
            }
        }
        Ok(())
    }
}
