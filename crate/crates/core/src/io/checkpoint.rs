//! SAE checkpoint files.
//!
//! ```text
//! offset   size   field
//! 0        4      magic "SAEC"
//! 4        1      version = 1
//! 5        4      H, u32 little-endian: length of the metadata block
//! 9        H      metadata, UTF-8 TOML (arch, m, d, k, seed, steps, and
//!                 the full training config under [config])
//! 9+H      ...    f64 little-endian tensors, row-major, in order:
//!                   w_enc  m*d
//!                   b_enc  m
//!                   w_dec  m*d
//!                   b_dec  d
//!                   r_mag  m      (gated only)
//!                   b_mag  m      (gated only)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::sae::{SaeParams, TrainConfig};

pub const CKPT_MAGIC: &[u8; 4] = b"SAEC";
pub const CKPT_VERSION: u8 = 1;
/// Decoder rows further than this from unit norm raise a load warning.
pub const NORM_WARN_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: String,
    m: usize,
    d: usize,
    k: Option<usize>,
    seed: u64,
    steps: usize,
    config: TrainConfig,
}

/// A checkpoint as read from disk.
#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub params: SaeParams,
    pub config: TrainConfig,
    /// Non-fatal invariant violations found while loading.
    pub warnings: Vec<String>,
}

pub fn encode_checkpoint(params: &SaeParams, config: &TrainConfig) -> Result<Vec<u8>> {
    if config.arch != params.arch || config.latents != params.m() {
        return Err(Error::InvalidArgument(format!(
            "config ({} with {} latents) does not describe params ({} with {} latents)",
            config.arch,
            config.latents,
            params.arch,
            params.m()
        )));
    }
    let header = Header {
        arch: params.arch.name().to_string(),
        m: params.m(),
        d: params.d(),
        k: params.arch.k(),
        seed: config.seed,
        steps: config.steps,
        config: config.clone(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.push(CKPT_VERSION);
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    for b in params.buffers() {
        for x in b {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<LoadedCheckpoint> {
    let truncated = |needed: usize| FormatError::Truncated { needed: needed as u64, found: bytes.len() as u64 };
    if bytes.len() < 9 {
        return Err(truncated(9).into());
    }
    if &bytes[..4] != CKPT_MAGIC {
        return Err(FormatError::BadMagic { expected: "SAEC" }.into());
    }
    if bytes[4] != CKPT_VERSION {
        return Err(FormatError::BadVersion(bytes[4]).into());
    }
    let h = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if bytes.len() < 9 + h {
        return Err(truncated(9 + h).into());
    }
    let text = std::str::from_utf8(&bytes[9..9 + h])
        .map_err(|e| FormatError::Layout(format!("metadata is not UTF-8: {e}")))?;
    let header: Header = toml::from_str(text).map_err(|e| FormatError::Layout(format!("metadata: {e}")))?;

    let arch = header.config.arch;
    if header.arch != arch.name() || header.k != arch.k() {
        return Err(FormatError::Layout(format!(
            "metadata arch {:?}/k={:?} disagrees with config {arch}",
            header.arch, header.k
        ))
        .into());
    }
    if header.m != header.config.latents || header.seed != header.config.seed || header.steps != header.config.steps {
        return Err(FormatError::Layout("metadata disagrees with config".into()).into());
    }
    let (m, d) = (header.m, header.d);
    if m == 0 || d == 0 {
        return Err(FormatError::Layout(format!("empty model: m = {m}, d = {d}")).into());
    }

    let mut params = SaeParams::zeros(d, m, arch);
    let floats: usize = params.buffers().iter().map(|b| b.len()).sum();
    let needed = 9 + h + floats * 8;
    if bytes.len() < needed {
        return Err(truncated(needed).into());
    }
    if bytes.len() > needed {
        return Err(FormatError::Trailing((bytes.len() - needed) as u64).into());
    }
    let mut values = bytes[9 + h..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for buf in params.buffers_mut() {
        for x in buf.iter_mut() {
            *x = values.next().expect("length checked");
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite { context: "checkpoint tensors".into() });
    }

    let mut warnings = Vec::new();
    let dev = params.decoder_norm_deviation();
    if dev > NORM_WARN_TOLERANCE {
        warnings.push(format!("decoder rows are not unit norm (max deviation {dev:e} > {NORM_WARN_TOLERANCE:e})"));
    }
    Ok(LoadedCheckpoint { params, config: header.config, warnings })
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &SaeParams, config: &TrainConfig) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(params, config)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Builds a config describing `params` for checkpoints of models that were
/// not produced by [`crate::sae::train`].
pub fn config_for(params: &SaeParams, seed: u64) -> TrainConfig {
    TrainConfig { seed, arch: params.arch, latents: params.m(), steps: 0, ..TrainConfig::default() }
}
