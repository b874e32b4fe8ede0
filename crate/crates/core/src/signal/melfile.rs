//! Binary mel spectrogram files.
//!
//! Little endian: `"MELS"`, `u32` version (1), `u32` n_mels, `u32` frames,
//! `f32` sample rate, `u32` hop, then `n_mels * frames` `f32` values
//! row-major.

use std::path::Path;

use super::MelSpec;
use crate::audio::write_atomic;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MELS";
const VERSION: u32 = 1;
const HEADER: usize = 24;

pub fn encode_mel(mel: &MelSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * mel.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mel.n_mels as u32).to_le_bytes());
    out.extend_from_slice(&(mel.frames as u32).to_le_bytes());
    out.extend_from_slice(&(mel.sample_rate as f32).to_le_bytes());
    out.extend_from_slice(&(mel.hop as u32).to_le_bytes());
    for v in &mel.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_mel(bytes: &[u8]) -> Result<MelSpec> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(Error::MelFile("missing MELS header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::MelFile(format!("unsupported version {version}")));
    }
    let (n_mels, frames) = (word(8) as usize, word(12) as usize);
    let sample_rate = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let hop = word(20) as usize;
    let want = n_mels
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MelFile("dimensions overflow".into()))?;
    if bytes.len() - HEADER != want {
        return Err(Error::MelFile(format!(
            "expected {want} payload bytes, found {}",
            bytes.len() - HEADER
        )));
    }
    let values = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpec::new(n_mels, frames, sample_rate as u32, hop, values)
}

pub fn write_mel(path: impl AsRef<Path>, mel: &MelSpec) -> Result<()> {
    write_atomic(path, &encode_mel(mel))
}

pub fn read_mel(path: impl AsRef<Path>) -> Result<MelSpec> {
    let path = path.as_ref();
    let bytes =
        std::fs::read(path).map_err(|e| Error::MelFile(format!("{}: {e}", path.display())))?;
    decode_mel(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let mel = MelSpec::new(2, 3, 22050, 256, vec![0.5, -1.0, 2.0, 3.0, 4.0, -11.5]).unwrap();
        let bytes = encode_mel(&mel);
        assert_eq!(&bytes[..4], b"MELS");
        assert_eq!(bytes.len(), 24 + 24);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(
            f32::from_le_bytes(bytes[16..20].try_into().unwrap()),
            22050.0
        );
        assert_eq!(decode_mel(&bytes).unwrap(), mel);
    }

    #[test]
    fn truncated_or_foreign_files_fail() {
        let mel = MelSpec::new(1, 2, 22050, 256, vec![0.0, 1.0]).unwrap();
        let bytes = encode_mel(&mel);
        assert!(decode_mel(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_mel(b"NOPE").is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_mel(&v2).is_err());
    }
}
