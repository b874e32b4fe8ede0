use super::stft::{padded_indices, StftMagnitude};
use super::{MelConfig, LOG_FLOOR};
use crate::error::{shape_err, Result};
use crate::tensor::{Float, Tensor};

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        mel * F_SP
    }
}

/// Triangular, area-normalized filters on the mel scale,
/// `[n_mels, n_fft/2 + 1]` row-major.
pub fn mel_filterbank(cfg: &MelConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n_freq = cfg.n_freq();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = vec![0.0; cfg.n_mels * n_freq];
    for m in 0..cfg.n_mels {
        let (left, centre, right) = (points[m], points[m + 1], points[m + 2]);
        let enorm = 2.0 / (right - left);
        for k in 0..n_freq {
            let f = k as f64 * bin_hz;
            let rise = (f - left) / (centre - left);
            let fall = (right - f) / (right - centre);
            fb[m * n_freq + k] = rise.min(fall).max(0.0) * enorm;
        }
    }
    Ok(fb)
}

/// Differentiable φ with its filterbank, window and FFT plans prepared once.
pub struct MelExtractor<T: Float> {
    cfg: MelConfig,
    filterbank: Tensor<T>,
    stft: StftMagnitude<T>,
}

impl<T: Float> MelExtractor<T> {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        let fb = mel_filterbank(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            filterbank: Tensor::new(
                fb.into_iter().map(T::of).collect(),
                &[cfg.n_mels, cfg.n_freq()],
            )?,
            stft: StftMagnitude::new(cfg),
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// `[B, T]` (or `[B, 1, T]`) waveform to `[B, n_mels, frames]` log-mel.
    pub fn forward(&self, audio: &Tensor<T>) -> Result<Tensor<T>> {
        let s = audio.shape().to_vec();
        let (batch, len) = match s.as_slice() {
            [b, t] => (*b, *t),
            [b, 1, t] => (*b, *t),
            _ => {
                return shape_err(
                    "mel_spectrogram",
                    format!("expected [B,T] or [B,1,T], got {s:?}"),
                )
            }
        };
        let idx = padded_indices(len, &self.cfg);
        let plen = idx.len();
        let index: Vec<usize> = (0..batch)
            .flat_map(|b| idx.iter().map(move |&i| b * len + i))
            .collect();
        let padded = audio.gather(index, &[batch, plen])?;
        let mag = self.stft.apply(&padded)?;
        Ok(self
            .filterbank
            .left_matmul_batched(&mag)?
            .clamp_min(LOG_FLOOR)
            .ln())
    }
}
