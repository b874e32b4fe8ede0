//! Mono waveforms and 16-bit PCM WAV files.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const SUPPORTED_RATES: [u32; 3] = [16000, 22050, 44100];

/// A mono waveform with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate) {
            return Err(Error::Wav(format!(
                "unsupported sample rate {sample_rate} Hz (expected one of {SUPPORTED_RATES:?})"
            )));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// `[1, len]` tensor view for the mel pipeline.
    pub fn to_tensor<T: Float>(&self) -> Result<Tensor<T>> {
        if self.samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        Tensor::new(
            self.samples.iter().map(|&s| T::of(s as f64)).collect(),
            &[1, self.samples.len()],
        )
    }

    /// Scales so the peak magnitude is at most one.
    pub fn normalized(mut self) -> Self {
        let peak = self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
        if peak > 1.0 {
            self.samples.iter_mut().for_each(|s| *s /= peak);
        }
        self
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses a RIFF/WAVE PCM16 mono byte stream.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Wav(format!(
                    "chunk {:?} runs past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Wav("fmt chunk too short".into()));
                }
                fmt = Some((
                    u16_at(body, 0),
                    u16_at(body, 2),
                    u32_at(body, 4),
                    u16_at(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Wav("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(Error::Wav(format!("non-PCM audio format tag {format}")));
    }
    if channels != 1 {
        return Err(Error::Wav(format!(
            "{channels}-channel audio; only mono is supported"
        )));
    }
    if bits != 16 {
        return Err(Error::Wav(format!(
            "unsupported bit depth {bits}; only 16-bit PCM is supported"
        )));
    }
    let data = data.ok_or_else(|| Error::Wav("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Wav("odd-sized PCM16 data chunk".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect();
    AudioClip::new(rate, samples)
}

pub fn wav_read(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    parse_wav(&bytes)
}

/// Quantizes a sample: round half away from zero, clamp to the i16 range.
pub fn quantize(s: f32) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Canonical 44-byte-header PCM16 mono encoding.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

/// Writes `bytes` to a temporary sibling and renames it into place, so a
/// failure never leaves a partial file at `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path.file_name().ok_or_else(|| {
        Error::Io(std::io::Error::other(format!(
            "{} has no file name",
            path.display()
        )))
    })?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn wav_write(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    write_atomic(path, &encode_wav(clip))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_scaling() {
        let clip = AudioClip::new(22050, vec![0.0, 32767.0 / 32768.0, -1.0]).unwrap();
        let back = parse_wav(&encode_wav(&clip)).unwrap();
        assert_eq!(back, clip);
        assert!((back.samples[1] - 0.999_969_5).abs() < 1e-7);
        assert_eq!(back.samples[0], 0.0);
    }

    #[test]
    fn quantize_rounds_half_away_and_clamps() {
        assert_eq!(quantize(0.5 / 32768.0), 1);
        assert_eq!(quantize(-0.5 / 32768.0), -1);
        assert_eq!(quantize(1.5), 32767);
        assert_eq!(quantize(-1.5), -32768);
    }

    #[test]
    fn rejects_stereo_and_other_depths() {
        let clip = AudioClip::new(16000, vec![0.1; 4]).unwrap();
        let mut stereo = encode_wav(&clip);
        stereo[22] = 2;
        assert!(parse_wav(&stereo).unwrap_err().to_string().contains("mono"));
        let mut b8 = encode_wav(&clip);
        b8[34] = 8;
        assert!(parse_wav(&b8)
            .unwrap_err()
            .to_string()
            .contains("bit depth"));
        let mut float = encode_wav(&clip);
        float[20] = 3;
        assert!(parse_wav(&float)
            .unwrap_err()
            .to_string()
            .contains("non-PCM"));
        assert!(parse_wav(b"RIFF\0\0\0\0WAVX").is_err());
    }

    #[test]
    fn truncated_data_is_an_error() {
        let clip = AudioClip::new(22050, vec![0.25; 10]).unwrap();
        let bytes = encode_wav(&clip);
        assert!(parse_wav(&bytes[..30]).is_err());
    }

    #[test]
    fn unsupported_rate_rejected() {
        assert!(AudioClip::new(48000, vec![0.0]).is_err());
    }
}
