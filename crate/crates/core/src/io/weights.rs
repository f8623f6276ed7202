use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HGPE";
pub const FORMAT_VERSION: u32 = 1;

/// One tensor as stored in a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub dtype: DType,
    /// Little-endian element bytes.
    pub payload: Vec<u8>,
}

/// Serializes every entry of `store`, buffers included, in store order.
///
/// Layout: magic, `u32` version, `u32` count, then per tensor a `u32` name
/// length, the UTF-8 name, a `u32` rank, `u64` dims, a `u8` dtype tag
/// (0 = f32, 1 = f64) and the raw payload. Integers are little-endian.
pub fn write_weights<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, e) in store.iter() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.value.rank() as u32).to_le_bytes());
        for &d in e.value.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(T::DTYPE.tag());
        for &v in e.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Format(format!("truncated at byte {} while reading {what} ({n} bytes needed)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses a weight file into its records without interpreting them.
pub fn read_weights(bytes: &[u8]) -> Result<Vec<WeightRecord>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not an HGPE weight file".into()));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = c.u32("tensor count")?;
    let mut records = Vec::new();
    for i in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor {name}: rank {rank} is implausible")));
        }
        let dims = (0..rank).map(|_| c.u64("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let tag = c.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("tensor {name}: unknown dtype tag {tag}")))?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let size = numel.and_then(|n| n.checked_mul(dtype.size_of()));
        let size = size.ok_or_else(|| Error::Format(format!("tensor {name}: dims {dims:?} overflow")))?;
        let payload = c.take(size, &format!("payload of {name}"))?.to_vec();
        records.push(WeightRecord { name, dims, dtype, payload });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(records)
}

fn decode<T: Scalar>(r: &WeightRecord) -> Result<Tensor<T>> {
    let data: Vec<T> = match r.dtype {
        DType::F32 => r.payload.chunks_exact(4).map(|b| T::of(f32::read_le(b) as f64)).collect(),
        DType::F64 => r.payload.chunks_exact(8).map(|b| T::of(f64::read_le(b))).collect(),
    };
    Tensor::from_vec(r.dims.clone(), data)
}

/// Replaces every entry of `store` with the file's tensors. Names must match
/// the store exactly and in order, and shapes must agree; the first
/// mismatch is reported by name. Elements of the other precision are converted.
pub fn load_weights_from<T: Scalar>(bytes: &[u8], store: &mut ParamStore<T>) -> Result<()> {
    let records = read_weights(bytes)?;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (i, id) in ids.iter().enumerate() {
        let expected = store.name(*id).to_string();
        let Some(r) = records.get(i) else {
            return Err(Error::TensorMismatch { name: expected, reason: "missing from weight file".into() });
        };
        if r.name != expected {
            return Err(Error::TensorMismatch { name: expected, reason: format!("weight file has {} in its place", r.name) });
        }
        if r.dims != store.get(*id).dims() {
            return Err(Error::TensorMismatch {
                name: expected,
                reason: format!("file shape {:?}, model shape {:?}", r.dims, store.get(*id).dims()),
            });
        }
    }
    if let Some(extra) = records.get(ids.len()) {
        return Err(Error::TensorMismatch { name: extra.name.clone(), reason: "not present in the model".into() });
    }
    for (id, r) in ids.into_iter().zip(&records) {
        store.set(id, decode(r)?)?;
    }
    Ok(())
}

pub fn save_weights<T: Scalar>(path: impl AsRef<Path>, store: &ParamStore<T>) -> Result<()> {
    fs::write(path, write_weights(store))?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>, store: &mut ParamStore<T>) -> Result<()> {
    load_weights_from(&fs::read(path)?, store)
}
