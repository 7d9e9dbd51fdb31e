//! Tensor blob files.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `BVL1`                            |
//! | 4      | 4    | element kind (`1` = 32-bit float)       |
//! | 8      | 4    | rank (1..=5)                            |
//! | 12     | 20   | five u32 dimension sizes, unused are 0  |
//! | 32     | ...  | row-major elements                      |

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BVL1";
pub const HEADER_LEN: usize = 32;
pub const KIND_F32: u32 = 1;
pub const MAX_RANK: usize = 5;

pub fn encode(array: &ArrayD<f64>) -> Result<Vec<u8>> {
    let shape = array.shape();
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidArgument(format!(
            "blob rank must be 1..={MAX_RANK}, got {}",
            shape.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * array.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&KIND_F32.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for i in 0..MAX_RANK {
        let d = shape.get(i).copied().unwrap_or(0);
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} too large for a blob")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in array.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ArrayD<f64>> {
    let fail = |msg: String| Error::format(path, None, msg);
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!("blob is {} bytes, shorter than its header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("bad magic, expected BVL1".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let kind = word(1);
    if kind != KIND_F32 {
        return Err(fail(format!("unsupported element kind {kind}")));
    }
    let rank = word(2) as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(fail(format!("invalid rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank).map(|i| word(3 + i) as usize).collect();
    let count: usize = shape.iter().product();
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * count {
        return Err(fail(format!(
            "expected {} payload bytes for shape {shape:?}, found {}",
            4 * count,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|e| fail(e.to_string()))
}

pub fn write(path: &Path, array: &ArrayD<f64>) -> Result<()> {
    let bytes = encode(array)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
