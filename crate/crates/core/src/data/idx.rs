//! Big-endian IDX arrays (the MNIST container format).
//!
//! Layout: two zero bytes, a data-type byte, a rank byte, `rank` big-endian
//! `u32` dimensions, then the payload. Only unsigned-byte payloads (`0x08`)
//! are accepted.

use std::path::Path;

use crate::error::{Error, Result};

const UNSIGNED_BYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated {
            needed: 4,
            found: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic[0] != 0 || magic[1] != 0 {
        return Err(Error::IdxBadMagic(magic));
    }
    if magic[2] != UNSIGNED_BYTE {
        return Err(Error::IdxUnsupportedType(magic[2]));
    }
    let rank = magic[3] as usize;
    if rank == 0 {
        return Err(Error::IdxBadMagic(magic));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::IdxTruncated {
            needed: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<u32> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|p| p.checked_add(header).map(|_| p))
        .ok_or_else(|| Error::IdxDimOverflow(dims.clone()))?;
    let needed = header + payload;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..needed].to_vec(),
    })
}

impl IdxArray {
    /// Items along the first axis, each flattened and scaled to `[0, 1]`.
    /// Returns `(items, item width, features)`.
    pub fn features(&self) -> Result<(usize, usize, Vec<f64>)> {
        let n = self.dims[0] as usize;
        let width: usize = self.dims[1..].iter().map(|&d| d as usize).product();
        if n == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "idx array {:?} has no features",
                self.dims
            )));
        }
        Ok((
            n,
            width,
            self.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        ))
    }

    /// A rank-1 array read as class labels.
    pub fn labels(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "label file must have rank 1, found dims {:?}",
                self.dims
            )));
        }
        Ok(self.data.iter().map(|&b| b as usize).collect())
    }
}
