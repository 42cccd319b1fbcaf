//! Flat binary container of named `f64` arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "STMAE1\0\0"
//! repeated until EOF:
//!   u32 name_len | name (UTF-8) | u32 rank | u64 extent × rank | f64 × prod(extents)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::error::TensorError;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STMAE1\0\0";

/// Named arrays in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    /// Inserts or replaces an entry.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let bad = |msg: &str| TensorError::Checkpoint(msg.to_string());
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing STMAE1 header"));
        }
        let mut r = Reader { bytes, pos: 8 };
        let mut ckpt = Checkpoint::new();
        while r.pos < bytes.len() {
            let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| bad("entry name is not UTF-8"))?
                .to_string();
            let rank = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
            let n = n.ok_or_else(|| bad("extent overflow"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("extent overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| TensorError::Checkpoint(format!("entry {name}: {e}")))?;
            ckpt.entries.push((name, t));
        }
        Ok(ckpt)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        if self.bytes.len() - self.pos < n {
            return Err(TensorError::Checkpoint("truncated entry".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TensorError> {
    let io = |e: std::io::Error| TensorError::Checkpoint(format!("{}: {e}", path.display()));
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&ckpt.to_bytes()).map_err(io)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, TensorError> {
    let bytes = fs::read(path).map_err(|e| TensorError::Checkpoint(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
