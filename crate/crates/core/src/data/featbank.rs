//! Binary region-feature bank.
//!
//! Layout, all little-endian: magic `SGRF`, `u32` version, `u32` image
//! count, `u32` K, `u32` d_raw, then `count · K · d_raw` `f32` values, one
//! image after another, each row-major `[K × d_raw]`.

use std::io::{Read, Write};
use std::path::Path;

use super::DataError;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SGRF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    k: usize,
    d_raw: usize,
    data: Vec<f32>,
}

impl FeatureBank {
    pub fn new(k: usize, d_raw: usize) -> Result<Self, DataError> {
        if k == 0 || d_raw == 0 {
            return Err(DataError::Inconsistent(format!("K={k}, d_raw={d_raw}")));
        }
        Ok(Self {
            k,
            d_raw,
            data: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d_raw(&self) -> usize {
        self.d_raw
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.k * self.d_raw)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Appends one image given as `K · d_raw` row-major values.
    pub fn push(&mut self, image: &[f32]) -> Result<(), DataError> {
        if image.len() != self.k * self.d_raw {
            return Err(DataError::Inconsistent(format!(
                "image with {} values in a bank of K={}, d_raw={}",
                image.len(),
                self.k,
                self.d_raw
            )));
        }
        self.data.extend_from_slice(image);
        Ok(())
    }

    pub fn raw(&self, i: usize) -> &[f32] {
        let n = self.k * self.d_raw;
        &self.data[i * n..(i + 1) * n]
    }

    /// Image `i` as a `[K × d_raw]` tensor.
    pub fn image(&self, i: usize) -> Tensor {
        Tensor::matrix(self.k, self.d_raw, self.raw(i).iter().map(|&x| f64::from(x)).collect())
    }

    /// Bank holding images `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureBank {
        let mut out = FeatureBank {
            k: self.k,
            d_raw: self.d_raw,
            data: Vec::with_capacity(indices.len() * self.k * self.d_raw),
        };
        for &i in indices {
            out.data.extend_from_slice(self.raw(i));
        }
        out
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, self.len() as u32, self.k as u32, self.d_raw as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < MAGIC.len() {
            return Err(DataError::Truncated {
                expected: HEADER_LEN,
                got: bytes.len(),
            });
        }
        if bytes[..4] != MAGIC {
            return Err(DataError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(DataError::Truncated {
                expected: HEADER_LEN,
                got: bytes.len(),
            });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(DataError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let (count, k, d) = (word(8) as usize, word(12) as usize, word(16) as usize);
        if k == 0 || d == 0 {
            return Err(DataError::Inconsistent(format!("header declares K={k}, d_raw={d}")));
        }
        let expected = count
            .checked_mul(k)
            .and_then(|x| x.checked_mul(d))
            .and_then(|x| x.checked_mul(4))
            .and_then(|x| x.checked_add(HEADER_LEN))
            .ok_or_else(|| DataError::Inconsistent("header sizes overflow".into()))?;
        if bytes.len() < expected {
            return Err(DataError::Truncated {
                expected,
                got: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(DataError::Inconsistent(format!(
                "{} trailing bytes after {count} images of K={k}, d_raw={d}",
                bytes.len() - expected
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { k, d_raw: d, data })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, DataError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| DataError::io("<reader>", e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn write_feature_bank(bank: &FeatureBank, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    std::fs::write(path, bank.to_bytes()).map_err(|e| DataError::io(path, e))
}

pub fn read_feature_bank(path: impl AsRef<Path>) -> Result<FeatureBank, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    FeatureBank::from_bytes(&bytes)
}
