//! Binary weights container.
//!
//! Layout:
//! ```text
//! magic   4 bytes  b"OSTW"
//! version u32 LE   currently 1
//! hdrlen  u64 LE   length of the JSON header in bytes
//! header  JSON     the ArchDescriptor
//! data    f64 LE   all parameters, concatenated in declaration order:
//!                  backbone modules first (per conv: weights then bias),
//!                  then head scales in order, then the proto branch
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::arch::ArchDescriptor;
use super::NetworkError;

pub const MAGIC: &[u8; 4] = b"OSTW";
pub const FORMAT_VERSION: u32 = 1;

/// Parsed contents of a weights file: the descriptor and the flat parameter
/// vector, still in declaration order.
#[derive(Debug)]
pub struct WeightsFile {
    pub arch: ArchDescriptor,
    pub params: Vec<f64>,
}

pub fn read_weights(path: &Path) -> Result<WeightsFile, NetworkError> {
    if !path.exists() {
        return Err(NetworkError::WeightsNotFound(path.to_path_buf()));
    }
    let mut file = std::fs::File::open(path)
        .map_err(|e| NetworkError::LoadFailure(format!("{}: {e}", path.display())))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| NetworkError::LoadFailure(format!("{}: {e}", path.display())))?;
    parse_weights(&buf).map_err(|e| NetworkError::LoadFailure(format!("{}: {e}", path.display())))
}

fn parse_weights(buf: &[u8]) -> Result<WeightsFile, String> {
    if buf.len() < 16 {
        return Err("file too short".into());
    }
    if &buf[0..4] != MAGIC {
        return Err("bad magic (not a weights file)".into());
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let hdr_len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let data_start = 16 + hdr_len;
    if buf.len() < data_start {
        return Err("truncated header".into());
    }
    let arch: ArchDescriptor = serde_json::from_slice(&buf[16..data_start])
        .map_err(|e| format!("invalid header: {e}"))?;
    arch.validate()?;
    let expected = arch.param_count();
    let data = &buf[data_start..];
    if data.len() != expected * 8 {
        return Err(format!(
            "weight data holds {} values, architecture needs {expected}",
            data.len() / 8
        ));
    }
    let mut params = Vec::with_capacity(expected);
    for chunk in data.chunks_exact(8) {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err("non-finite parameter value".into());
        }
        params.push(v);
    }
    Ok(WeightsFile { arch, params })
}

pub fn write_weights(
    path: &Path,
    arch: &ArchDescriptor,
    params: &[f64],
) -> Result<(), NetworkError> {
    arch.validate().map_err(NetworkError::LoadFailure)?;
    let expected = arch.param_count();
    if params.len() != expected {
        return Err(NetworkError::LoadFailure(format!(
            "{} parameter values provided, architecture needs {expected}",
            params.len()
        )));
    }
    let header = serde_json::to_vec(arch)
        .map_err(|e| NetworkError::LoadFailure(format!("header serialization: {e}")))?;
    let mut out = Vec::with_capacity(16 + header.len() + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| NetworkError::LoadFailure(format!("{}: {e}", path.display())))?;
    file.write_all(&out)
        .map_err(|e| NetworkError::LoadFailure(format!("{}: {e}", path.display())))?;
    Ok(())
}
