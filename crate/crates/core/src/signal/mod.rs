//! Short-time Fourier transform, mel filterbank and the log-mel
//! spectrogram used both as generator input and inside the mel loss.

mod mel;
mod melfile;
mod stft;

pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelExtractor};
pub use melfile::{read_mel, write_mel};
pub(crate) use stft::reflect;
pub use stft::{frame_count, padded_indices, stft, Spectrogram};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::tensor::{no_grad, Float, Tensor};

/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-5;

/// Analysis settings for the mel spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    /// Conditioning mel: 80 bands up to 8 kHz at 22.05 kHz.
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            win_size: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl MelConfig {
    /// Same analysis, band limited only by Nyquist (used by the mel loss).
    pub fn full_band(&self) -> Self {
        Self {
            fmax: self.sample_rate as f64 / 2.0,
            ..self.clone()
        }
    }

    pub fn n_freq(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("mel: {m}")));
        if self.hop == 0 || self.hop > self.win_size {
            return bad(format!(
                "hop {} must be in 1..=win_size {}",
                self.hop, self.win_size
            ));
        }
        if self.win_size > self.n_fft {
            return bad(format!(
                "win_size {} exceeds n_fft {}",
                self.win_size, self.n_fft
            ));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be >= 1".into());
        }
        if !(self.fmin >= 0.0
            && self.fmin < self.fmax
            && self.fmax <= self.sample_rate as f64 / 2.0)
        {
            return bad(format!(
                "need 0 <= fmin < fmax <= sample_rate/2, got fmin={} fmax={} sr={}",
                self.fmin, self.fmax, self.sample_rate
            ));
        }
        Ok(())
    }
}

/// Log-amplitude mel spectrogram, `[n_mels, frames]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec {
    pub n_mels: usize,
    pub frames: usize,
    pub sample_rate: u32,
    pub hop: usize,
    pub values: Vec<f32>,
}

impl MelSpec {
    pub fn new(
        n_mels: usize,
        frames: usize,
        sample_rate: u32,
        hop: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if n_mels == 0 || frames == 0 || values.len() != n_mels * frames {
            return Err(Error::MelFile(format!(
                "{} values for {n_mels}x{frames}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MelFile("non-finite mel value".into()));
        }
        Ok(Self {
            n_mels,
            frames,
            sample_rate,
            hop,
            values,
        })
    }

    /// `[1, n_mels, frames]` tensor for the generator.
    pub fn to_tensor<T: Float>(&self) -> Result<Tensor<T>> {
        Tensor::new(
            self.values.iter().map(|&v| T::of(v as f64)).collect(),
            &[1, self.n_mels, self.frames],
        )
    }

    /// Mean absolute difference to another spectrogram of the same shape.
    pub fn mean_abs_diff(&self, other: &MelSpec) -> Result<f64> {
        if self.n_mels != other.n_mels || self.frames != other.frames {
            return Err(Error::MelFile(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.n_mels, self.frames, other.n_mels, other.frames
            )));
        }
        let total: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        Ok(total / self.values.len() as f64)
    }
}

/// φ: waveform to log-mel spectrogram (64-bit evaluation, stored as f32).
pub fn mel_spectrogram(audio: &AudioClip, cfg: &MelConfig) -> Result<MelSpec> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let ex = MelExtractor::<f64>::new(cfg)?;
    let mel = no_grad(|| ex.forward(&audio.to_tensor()?))?;
    let frames = mel.shape()[2];
    let values = mel.data().iter().map(|&v| v as f32).collect();
    MelSpec::new(cfg.n_mels, frames, cfg.sample_rate, cfg.hop, values)
}

/// Magnitude of the DFT over the non-negative frequencies (`N/2 + 1` bins).
pub fn frequency_response(signal: &[f64]) -> Vec<f64> {
    assert!(!signal.is_empty(), "frequency_response of an empty signal");
    let n = signal.len();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// Every `factor`-th sample starting at `phase`.
pub fn decimate<S: Copy>(signal: &[S], factor: usize, phase: usize) -> Vec<S> {
    assert!(
        factor >= 1 && phase < factor,
        "decimate needs 0 <= phase < factor"
    );
    signal.iter().skip(phase).step_by(factor).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimate_examples() {
        let x: Vec<i32> = (1..=6).collect();
        assert_eq!(decimate(&x, 3, 0), vec![1, 4]);
        assert_eq!(decimate(&x, 1, 0), x);
        assert_eq!(decimate(&x, 2, 1), vec![2, 4, 6]);
    }

    #[test]
    fn frequency_response_of_constant_is_dc_only() {
        let r = frequency_response(&[2.0; 16]);
        assert!((r[0] - 32.0).abs() < 1e-12);
        assert!(r[1..].iter().all(|&m| m < 1e-12));
    }

    #[test]
    fn config_validation() {
        assert!(MelConfig::default().validate().is_ok());
        assert!(MelConfig::default().full_band().validate().is_ok());
        let bad = MelConfig {
            hop: 2048,
            ..MelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MelConfig {
            fmax: 12000.0,
            ..MelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MelConfig {
            n_mels: 0,
            ..MelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let clip = AudioClip::new(22050, vec![0.0; 2048]).unwrap();
        let mel = mel_spectrogram(&clip, &MelConfig::default()).unwrap();
        assert_eq!(mel.frames, 8);
        let floor = (LOG_FLOOR as f32).ln();
        assert!(mel.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn one_second_gives_87_frames() {
        let clip = AudioClip::new(
            22050,
            (0..22050).map(|i| (i as f32 * 0.05).sin() * 0.3).collect(),
        )
        .unwrap();
        let mel = mel_spectrogram(&clip, &MelConfig::default()).unwrap();
        assert_eq!(mel.frames, 87);
        assert_eq!(mel.n_mels, 80);
    }

    #[test]
    fn phi_is_deterministic() {
        let clip = AudioClip::new(
            22050,
            (0..4096)
                .map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5)
                .collect(),
        )
        .unwrap();
        let a = mel_spectrogram(&clip, &MelConfig::default()).unwrap();
        let b = mel_spectrogram(&clip, &MelConfig::default()).unwrap();
        assert_eq!(
            a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.mean_abs_diff(&b).unwrap(), 0.0);
    }
}
