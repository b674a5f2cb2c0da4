//! Versioned, checksummed container for trained artifacts.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "TRIAGEAR"
//! version    u32      FORMAT_VERSION
//! kind_len   u32
//! kind       kind_len bytes, UTF-8 (e.g. "classifier", "context_model")
//! body_len   u64
//! body       body_len bytes, JSON
//! checksum   32 bytes, SHA-256 over everything above
//! ```
//!
//! Floats in the JSON body use shortest round-trip formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"TRIAGEAR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not an artifact file (bad magic)")]
    BadMagic,
    #[error("artifact format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt artifact: {0}")]
    Corrupt(&'static str),
    #[error("artifact holds a {found:?}, expected a {expected:?}")]
    KindMismatch { found: String, expected: String },
    #[error("artifact body: {0}")]
    Body(#[from] serde_json::Error),
}

pub fn encode<T: Serialize>(kind: &str, value: &T) -> Result<Vec<u8>, ArtifactError> {
    encode_with_version(kind, value, FORMAT_VERSION)
}

fn encode_with_version<T: Serialize>(kind: &str, value: &T, version: u32) -> Result<Vec<u8>, ArtifactError> {
    let body = serde_json::to_vec(value)?;
    let mut out = Vec::with_capacity(body.len() + kind.len() + 56);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(kind.len() as u32).to_le_bytes());
    out.extend_from_slice(kind.as_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(expected_kind: &str, bytes: &[u8]) -> Result<T, ArtifactError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(ArtifactError::BadMagic);
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ArtifactError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let kind_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    let kind = std::str::from_utf8(cur.take(kind_len)?).map_err(|_| ArtifactError::Corrupt("kind is not UTF-8"))?;
    let kind = kind.to_owned();
    let body_len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
    let body_len = usize::try_from(body_len).map_err(|_| ArtifactError::Corrupt("body length overflow"))?;
    let body = cur.take(body_len)?;
    let covered = cur.pos;
    let checksum = cur.take(32)?;
    if cur.pos != bytes.len() {
        return Err(ArtifactError::Corrupt("trailing bytes"));
    }
    if Sha256::digest(&bytes[..covered]).as_slice() != checksum {
        return Err(ArtifactError::Corrupt("checksum mismatch"));
    }
    if kind != expected_kind {
        return Err(ArtifactError::KindMismatch { found: kind, expected: expected_kind.to_owned() });
    }
    Ok(serde_json::from_slice(body)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArtifactError> {
        let end =
            self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(ArtifactError::Corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn write<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<(), ArtifactError> {
    let bytes = encode(kind, value)?;
    fs::write(path, bytes).map_err(|source| ArtifactError::Io { path: path.display().to_string(), source })
}

pub fn read<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, ArtifactError> {
    let bytes = fs::read(path).map_err(|source| ArtifactError::Io { path: path.display().to_string(), source })?;
    decode(kind, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_failures() {
        let value = vec![0.1f64, -2.5e-300, 1.0 / 3.0];
        let bytes = encode("floats", &value).unwrap();
        let back: Vec<f64> = decode("floats", &bytes).unwrap();
        assert_eq!(
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            value.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );

        assert!(matches!(decode::<Vec<f64>>("floats", &bytes[..bytes.len() - 5]), Err(ArtifactError::Corrupt(_))));
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(matches!(decode::<Vec<f64>>("floats", &flipped), Err(ArtifactError::Corrupt(_))));
        assert!(matches!(decode::<Vec<f64>>("other", &bytes), Err(ArtifactError::KindMismatch { .. })));

        let bumped = encode_with_version("floats", &value, FORMAT_VERSION + 1).unwrap();
        assert!(matches!(
            decode::<Vec<f64>>("floats", &bumped),
            Err(ArtifactError::VersionMismatch { found: 2, expected: 1 })
        ));
        assert!(matches!(decode::<Vec<f64>>("floats", b"garbage!garbage"), Err(ArtifactError::BadMagic)));
    }
}
