//! Binary tensor container used for model checkpoints and feature archives.
//!
//! Layout (all integers little-endian): the 7-byte magic `ECPIPE1`, one
//! version byte, a `u32` tensor count, then for each tensor the `u32` name
//! length and UTF-8 name, `u32` rank, `u32` dims, a dtype tag (0 = f32,
//! 1 = f64) and the raw values.

use std::path::Path;

use super::param::Parameters;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"ECPIPE1";
pub const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;
const META_PREFIX: &str = "meta.";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_model(model: &mut dyn Parameters) -> Self {
        Self {
            tensors: model.snapshot(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    /// Stores an integer as two exact 32-bit halves.
    pub fn set_meta_u64(&mut self, key: &str, v: u64) {
        let t = Tensor::from_vec(&[2], vec![(v >> 32) as f64, (v & 0xffff_ffff) as f64])
            .expect("shape");
        self.push(format!("{META_PREFIX}{key}"), t);
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        let t = self.require(&format!("{META_PREFIX}{key}"))?;
        let d = t.data();
        if d.len() != 2 {
            return Err(Error::Checkpoint(format!("bad metadata {key}")));
        }
        Ok(((d[0] as u64) << 32) | d[1] as u64)
    }

    pub fn set_meta_f64s(&mut self, key: &str, v: &[f64]) {
        self.push(
            format!("{META_PREFIX}{key}"),
            Tensor::from_vec(&[v.len()], v.to_vec()).expect("shape"),
        );
    }

    pub fn meta_f64s(&self, key: &str) -> Result<&[f64]> {
        Ok(self.require(&format!("{META_PREFIX}{key}"))?.data())
    }

    /// Tensors that are not metadata, in stored order.
    pub fn params(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.tensors.iter().filter(|(n, _)| !n.starts_with(META_PREFIX))
    }

    /// Loads parameter values into `model`, checking names and shapes.
    pub fn load_into(&self, model: &mut dyn Parameters, prefix: &str) -> Result<()> {
        let mut err = None;
        model.visit(prefix, &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.get(name) {
                Some(t) if t.shape() == p.value.shape() => p.value = t.clone(),
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "{name}: shape {:?} != {:?}",
                        t.shape(),
                        p.value.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(DTYPE_F64);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "unsupported version: bad magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version byte {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let data = match r.take(1)?[0] {
                DTYPE_F64 => r
                    .take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                DTYPE_F32 => r
                    .take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                tag => return Err(Error::Checkpoint(format!("unknown dtype tag {tag}"))),
            };
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push("a.weight", Tensor::from_vec(&[2, 2], vec![0.1, -2.5, 1e-300, f64::MAX]).unwrap());
        c.push("b", Tensor::from_vec(&[0], vec![]).unwrap());
        c.set_meta_u64("seed", u64::MAX - 7);
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta_u64("seed").unwrap(), u64::MAX - 7);
        for ((_, a), (_, b)) in c.tensors.iter().zip(&back.tensors) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn truncation_and_bad_magic_fail() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut bad = bytes.clone();
        bad[..7].copy_from_slice(b"XXXXXXX");
        let err = Checkpoint::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
        let mut bad_version = bytes;
        bad_version[7] = 9;
        assert!(Checkpoint::from_bytes(&bad_version).is_err());
    }
}
