//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "HGWT"
//! version      u32      1
//! blob_count   u32
//! blob_count times:
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   dtype      u8       0 = f32, 1 = f16
//!   rank       u8       always 4
//!   dims       4 x u32  N, C, H, W
//!   data       N*C*H*W elements, 4 or 2 bytes each
//! ```
//!
//! All blobs in one file share a dtype. Anything after the last blob is an
//! error.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::fp16::HalfBits;
use crate::tensor::{Dtype, Shape, Tensor, TensorData, TensorError};

pub const WEIGHT_MAGIC: [u8; 4] = *b"HGWT";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightFileError {
    #[error("not a weight file (bad magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported weight file version {0}")]
    Version(u32),
    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("{0} trailing bytes after the last blob")]
    TrailingBytes(usize),
    #[error("blob `{blob}`: unknown dtype code {code}")]
    BadDtype { blob: String, code: u8 },
    #[error("blob `{blob}`: rank {rank}, expected 4")]
    BadRank { blob: String, rank: u8 },
    #[error("blob `{blob}` is {got} but the file is {expected}")]
    MixedDtypes { blob: String, expected: Dtype, got: Dtype },
    #[error("blob name is not valid UTF-8")]
    BadName,
    #[error("blob name `{0}` is longer than 65535 bytes")]
    NameTooLong(String),
    #[error("duplicate blob `{0}`")]
    Duplicate(String),
    #[error("blob `{blob}`: {source}")]
    Shape { blob: String, source: TensorError },
    #[error("weights are already F16")]
    AlreadyF16,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A named set of tensors sharing one dtype.
#[derive(Clone, Debug)]
pub struct WeightFile {
    dtype: Dtype,
    blobs: BTreeMap<String, Tensor>,
}

impl WeightFile {
    pub fn new(dtype: Dtype, blobs: BTreeMap<String, Tensor>) -> Result<Self, WeightFileError> {
        for (name, t) in &blobs {
            if t.dtype() != dtype {
                return Err(WeightFileError::MixedDtypes { blob: name.clone(), expected: dtype, got: t.dtype() });
            }
            if name.len() > u16::MAX as usize {
                return Err(WeightFileError::NameTooLong(name.clone()));
            }
        }
        Ok(WeightFile { dtype, blobs })
    }

    /// Dtype of every blob. An empty file reports f32.
    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn blobs(&self) -> &BTreeMap<String, Tensor> {
        &self.blobs
    }

    pub fn into_blobs(self) -> BTreeMap<String, Tensor> {
        self.blobs
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.blobs.get(name)
    }

    pub fn element_count(&self) -> usize {
        self.blobs.values().map(Tensor::len).sum()
    }

    /// Serialized size minus the element payload.
    pub fn header_bytes(&self) -> usize {
        12 + self.blobs.keys().map(|name| 2 + name.len() + 2 + 16).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.element_count() * self.dtype.element_size();
        let mut out = Vec::with_capacity(self.header_bytes() + payload);
        out.extend_from_slice(&WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, t) in &self.blobs {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dtype_code(t.dtype()));
            out.push(4);
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match t.data() {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F16(v) => v.iter().for_each(|h| out.extend_from_slice(&h.to_bits().to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightFileError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != WEIGHT_MAGIC {
            return Err(WeightFileError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != WEIGHT_VERSION {
            return Err(WeightFileError::Version(version));
        }
        let count = r.u32()?;
        let mut dtype = None;
        let mut blobs = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| WeightFileError::BadName)?.to_string();
            let code = r.u8()?;
            let blob_dtype = match code {
                0 => Dtype::F32,
                1 => Dtype::F16,
                _ => return Err(WeightFileError::BadDtype { blob: name, code }),
            };
            match dtype {
                None => dtype = Some(blob_dtype),
                Some(d) if d != blob_dtype => {
                    return Err(WeightFileError::MixedDtypes { blob: name, expected: d, got: blob_dtype })
                }
                Some(_) => {}
            }
            let rank = r.u8()?;
            if rank != 4 {
                return Err(WeightFileError::BadRank { blob: name, rank });
            }
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                *d = r.u32()? as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let count =
                shape.checked_count().map_err(|source| WeightFileError::Shape { blob: name.clone(), source })?;
            let nbytes = count
                .checked_mul(blob_dtype.element_size())
                .ok_or(WeightFileError::Shape { blob: name.clone(), source: TensorError::Overflow(shape) })?;
            let raw = r.take(nbytes)?;
            let data = match blob_dtype {
                Dtype::F32 => TensorData::F32(
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
                ),
                Dtype::F16 => TensorData::F16(
                    raw.chunks_exact(2)
                        .map(|c| HalfBits::from_bits(u16::from_le_bytes(c.try_into().expect("2 bytes"))))
                        .collect(),
                ),
            };
            let tensor = Tensor::from_data(shape, data)
                .map_err(|source| WeightFileError::Shape { blob: name.clone(), source })?;
            if blobs.insert(name.clone(), tensor).is_some() {
                return Err(WeightFileError::Duplicate(name));
            }
        }
        if r.pos != bytes.len() {
            return Err(WeightFileError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(WeightFile { dtype: dtype.unwrap_or(Dtype::F32), blobs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeightFileError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn dtype_code(d: Dtype) -> u8 {
    match d {
        Dtype::F32 => 0,
        Dtype::F16 => 1,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightFileError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(WeightFileError::Truncated { offset: self.pos, needed: n, available });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightFileError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightFileError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, WeightFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>, WeightFileError> {
    Ok(WeightFile::load(path)?.into_blobs())
}

pub fn save_weights(
    blobs: &BTreeMap<String, Tensor>,
    dtype: Dtype,
    path: impl AsRef<Path>,
) -> Result<(), WeightFileError> {
    WeightFile::new(dtype, blobs.clone())?.save(path)
}
