//! "PFCKPT v1" binary checkpoints.
//!
//! Layout (little-endian): magic, `u32` tensor count, then per tensor a
//! manifest record (`u32` name length, name bytes, `u32` rank, `u64` extents,
//! `u8` dtype code); then every payload in manifest order; then a `u64`
//! FNV-1a hash of the payload bytes.

use std::path::Path;

use crate::autodiff::params::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 9] = b"PFCKPT v1";

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A tensor read from a checkpoint, kept at its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`; exact when the stored precision equals `T`.
    pub fn to<T: Real>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode_checkpoint<T: Real>(entries: &[(&str, &Tensor<T>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(entries.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?.to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.push(T::DTYPE);
    }
    let start = out.len();
    for (_, t) in entries {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let sum = fnv1a64(&out[start..]);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

pub fn save_checkpoint<T: Real>(path: &Path, entries: &[(&str, &Tensor<T>)]) -> Result<()> {
    let bytes = encode_checkpoint(entries)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
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
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, StoredTensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("extent overflow".into()))?);
        }
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 && dtype != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("unknown dtype code {dtype} for {name}")));
        }
        manifest.push((name, shape, dtype));
    }
    let start = r.pos;
    let mut out = Vec::with_capacity(manifest.len());
    for (name, shape, dtype) in manifest {
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or_else(|| Error::Checkpoint("size overflow".into()))?;
        let bad = |e: Error| Error::Checkpoint(format!("tensor {name}: {e}"));
        let t = if dtype == DTYPE_F32 {
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            StoredTensor::F32(Tensor::new(shape, raw.chunks_exact(4).map(f32::read_le).collect()).map_err(bad)?)
        } else {
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            StoredTensor::F64(Tensor::new(shape, raw.chunks_exact(8).map(f64::read_le).collect()).map_err(bad)?)
        };
        out.push((name, t));
    }
    let payload_end = r.pos;
    let stored = r.u64()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after checksum".into()));
    }
    if fnv1a64(&bytes[start..payload_end]) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    Ok(out)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, StoredTensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Outcome of loading a checkpoint into a [`ParamStore`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Names copied into the store.
    pub loaded: Vec<String>,
    /// Checkpoint entries absent from the store or with a different shape.
    pub skipped: Vec<String>,
    /// Store entries the checkpoint did not provide.
    pub missing: Vec<String>,
}

/// Copies matching name+shape entries into `store`. In strict mode any
/// skipped or missing entry is an error and the store is left unchanged.
pub fn apply_checkpoint<T: Real>(store: &mut ParamStore<T>, entries: &[(String, StoredTensor)], strict: bool) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut matched = Vec::new();
    for (name, t) in entries {
        match store.get(name) {
            Some(cur) if cur.shape() == t.shape() => {
                report.loaded.push(name.clone());
                matched.push((name, t));
            }
            _ => report.skipped.push(name.clone()),
        }
    }
    for (name, _) in store.named_tensors() {
        if !entries.iter().any(|(n, _)| n == name) {
            report.missing.push(name.to_string());
        }
    }
    if strict && (!report.skipped.is_empty() || !report.missing.is_empty()) {
        let mut bad = report.skipped.clone();
        bad.extend(report.missing.iter().cloned());
        return Err(Error::StrictMismatch(bad));
    }
    for (name, t) in matched {
        *store.get_mut(name).expect("matched above") = t.to();
    }
    Ok(report)
}

impl<T: Real> ParamStore<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.named_tensors())
    }

    pub fn load(&mut self, path: &Path, strict: bool) -> Result<LoadReport> {
        let entries = read_checkpoint(path)?;
        apply_checkpoint(self, &entries, strict)
    }
}
