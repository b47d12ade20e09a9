//! On-disk formats.
//!
//! Every file is a container:
//!
//! ```text
//! magic        8 bytes
//! version      u32 LE
//! manifest_len u64 LE
//! manifest     JSON, manifest_len bytes
//! payload      rest of the file
//! ```
//!
//! All numbers in payloads are little-endian.

pub mod calib;
pub mod model_file;
pub mod packed;
pub mod synthetic;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use calib::{load_calibration, save_calibration, CalibrationSet, CalibrationSource};
pub use model_file::{load_model, model_checksum, save_model, ModelManifest, TensorEntry};
pub use packed::{load_packed, pack_codes, save_packed, unpack_codes, PackedModel};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub(crate) fn write_container<M: Serialize>(
    magic: &[u8; 8],
    version: u32,
    manifest: &M,
    payload: &[u8],
) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest)
        .map_err(|e| Error::Format(format!("cannot encode manifest: {e}")))?;
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Splits a container into its manifest and payload.
pub(crate) fn read_container<'a, M: DeserializeOwned>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    version: u32,
) -> Result<(M, &'a [u8])> {
    if bytes.len() < 20 || &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "missing {} header",
            String::from_utf8_lossy(&magic[..7])
        )));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::Version {
            found,
            expected: version,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(20))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("manifest length exceeds file".into()))?;
    let manifest = serde_json::from_slice(&bytes[20..end])
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    Ok((manifest, &bytes[end..]))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)
        .map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

pub(crate) fn f64s_to_bytes(values: &[f64], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn f64s_from_bytes(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}
