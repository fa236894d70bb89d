//! `ACTV` activation files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ACTV"
//! 4       1     version = 1
//! 5       4     d, u32 little-endian
//! 9       8     n, u64 little-endian
//! 17      1     dtype tag: 4 = f32, 8 = f64
//! 18      n*d*s row-major samples, little-endian IEEE-754, s = tag bytes
//! ```
//!
//! The file must end exactly at the end of the payload.

use std::path::Path;

use super::{ActivationDataset, Dtype};
use crate::error::{Error, FormatError, Result};
use crate::linalg::Matrix;

pub const ACTV_MAGIC: &[u8; 4] = b"ACTV";
pub const ACTV_VERSION: u8 = 1;
pub const ACTV_HEADER_LEN: usize = 18;

pub fn encode_activations(dataset: &ActivationDataset) -> Vec<u8> {
    let (n, d) = (dataset.n(), dataset.d());
    let mut buf = Vec::with_capacity(ACTV_HEADER_LEN + n * d * dataset.dtype.size());
    buf.extend_from_slice(ACTV_MAGIC);
    buf.push(ACTV_VERSION);
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.push(dataset.dtype.tag());
    match dataset.dtype {
        Dtype::F64 => dataset.samples().as_slice().iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        Dtype::F32 => {
            dataset.samples().as_slice().iter().for_each(|&x| buf.extend_from_slice(&(x as f32).to_le_bytes()))
        }
    }
    buf
}

pub fn decode_activations(bytes: &[u8], source: &str) -> Result<ActivationDataset> {
    if bytes.len() < ACTV_HEADER_LEN {
        return Err(FormatError::Truncated { needed: ACTV_HEADER_LEN as u64, found: bytes.len() as u64 }.into());
    }
    if &bytes[0..4] != ACTV_MAGIC {
        return Err(FormatError::BadMagic { expected: "ACTV" }.into());
    }
    if bytes[4] != ACTV_VERSION {
        return Err(FormatError::BadVersion(bytes[4]).into());
    }
    let d = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as u64;
    let n = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let dtype = Dtype::from_tag(bytes[17]).ok_or(FormatError::BadDtype(bytes[17]))?;

    let payload = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(dtype.size() as u64))
        .ok_or_else(|| FormatError::Layout(format!("n = {n}, d = {d} overflows")))?;
    let needed = ACTV_HEADER_LEN as u64 + payload;
    let found = bytes.len() as u64;
    if found < needed {
        return Err(FormatError::Truncated { needed, found }.into());
    }
    if found > needed {
        return Err(FormatError::Trailing(found - needed).into());
    }

    let body = &bytes[ACTV_HEADER_LEN..];
    let data: Vec<f64> = match dtype {
        Dtype::F64 => body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        Dtype::F32 => body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
    };
    let samples = Matrix::from_vec(n as usize, d as usize, data)?;
    ActivationDataset::new(samples, dtype, source)
}

pub fn write_activations(path: impl AsRef<Path>, dataset: &ActivationDataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_activations(dataset)).map_err(|e| Error::io(path, e))
}

pub fn read_activations(path: impl AsRef<Path>) -> Result<ActivationDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_activations(&bytes, &path.display().to_string())
}
