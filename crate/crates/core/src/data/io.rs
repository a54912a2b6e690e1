//! Binary session files.
//!
//! Layout: the 8-byte magic `EMGSESS1`, a little-endian `u64` header length,
//! a JSON header, the EMG and joint matrices as little-endian `f64` in
//! row-major order, then the mask packed LSB-first into bytes.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::session::Session;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EMGSESS1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    session_id: String,
    user_id: String,
    stage_id: String,
    sample_rate_hz: f64,
    channels: usize,
    joints: usize,
    samples: usize,
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub(crate) fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn take_f64s(bytes: &[u8], pos: &mut usize, n: usize) -> Result<Vec<f64>> {
    let end = n.checked_mul(8).and_then(|b| b.checked_add(*pos)).filter(|&e| e <= bytes.len());
    let end = end.ok_or_else(|| Error::Format("truncated data block".into()))?;
    let out = bytes[*pos..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    *pos = end;
    Ok(out)
}

/// Reads the magic and JSON header; returns the header and the offset of the payload.
pub(crate) fn read_header<T: for<'de> Deserialize<'de>>(bytes: &[u8], magic: &[u8; 8]) -> Result<(T, usize)> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::Format(format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len());
    let end = end.ok_or_else(|| Error::Format("truncated header".into()))?;
    Ok((serde_json::from_slice(&bytes[16..end])?, end))
}

pub(crate) fn encode_header<T: Serialize>(magic: &[u8; 8], header: &T) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(16 + json.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    Ok(buf)
}

pub fn encode_session(s: &Session) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        session_id: s.session_id.clone(),
        user_id: s.user_id.clone(),
        stage_id: s.stage_id.clone(),
        sample_rate_hz: s.sample_rate_hz,
        channels: s.channels(),
        joints: s.joints(),
        samples: s.samples(),
    };
    let mut buf = encode_header(MAGIC, &header)?;
    push_f64s(&mut buf, s.emg.data());
    push_f64s(&mut buf, s.joint_angles.data());
    let mut packed = vec![0u8; s.samples().div_ceil(8)];
    for (i, _) in s.valid_mask.iter().enumerate().filter(|(_, &m)| m) {
        packed[i / 8] |= 1 << (i % 8);
    }
    buf.extend_from_slice(&packed);
    Ok(buf)
}

pub fn decode_session(bytes: &[u8]) -> Result<Session> {
    let (h, mut pos): (Header, usize) = read_header(bytes, MAGIC)?;
    if h.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported session format version {}", h.format_version)));
    }
    let emg = take_f64s(bytes, &mut pos, h.channels * h.samples)?;
    let joints = take_f64s(bytes, &mut pos, h.joints * h.samples)?;
    let packed = bytes.get(pos..pos + h.samples.div_ceil(8)).ok_or_else(|| Error::Format("truncated mask".into()))?;
    if bytes.len() != pos + packed.len() {
        return Err(Error::Format("trailing bytes after mask".into()));
    }
    let mask = (0..h.samples).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
    Session::new(
        h.session_id,
        h.user_id,
        h.stage_id,
        h.sample_rate_hz,
        Tensor::matrix(h.channels, h.samples, emg)?,
        Tensor::matrix(h.joints, h.samples, joints)?,
        mask,
    )
}

pub fn write_session(path: &Path, s: &Session) -> Result<()> {
    write_atomic(path, &encode_session(s)?)
}

pub fn read_session(path: &Path) -> Result<Session> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_session(&bytes)
}
