use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::MelConfig;
use crate::audio::AudioClip;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Float, Tensor};

/// Mirror index into `[0, n)` without repeating the edge sample.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let j = i.rem_euclid(period);
    if j < n as isize {
        j as usize
    } else {
        (period - j) as usize
    }
}

/// Left and right padding applied before framing: `(n_fft - hop)/2` on each
/// side plus enough on the right to round the length up to a hop multiple.
fn pads(len: usize, cfg: &MelConfig) -> (usize, usize) {
    let base = cfg.n_fft - cfg.hop;
    let left = base / 2;
    let tail = (cfg.hop - len % cfg.hop) % cfg.hop;
    (left, base - left + tail)
}

/// Number of frames for a signal of `len` samples: `ceil(len / hop)`.
pub fn frame_count(len: usize, cfg: &MelConfig) -> usize {
    let (l, r) = pads(len, cfg);
    (len + l + r - cfg.n_fft) / cfg.hop + 1
}

/// Source index of every sample in the reflect-padded signal.
pub fn padded_indices(len: usize, cfg: &MelConfig) -> Vec<usize> {
    let (l, r) = pads(len, cfg);
    (0..len + l + r)
        .map(|i| reflect(i as isize - l as isize, len))
        .collect()
}

/// Periodic Hann window of `win_size`, centred in `n_fft` with zero fill.
pub(crate) fn window<T: Float>(cfg: &MelConfig) -> Vec<T> {
    let mut w = vec![T::zero(); cfg.n_fft];
    let off = (cfg.n_fft - cfg.win_size) / 2;
    for i in 0..cfg.win_size {
        let phase = 2.0 * std::f64::consts::PI * i as f64 / cfg.win_size as f64;
        w[off + i] = T::of(0.5 - 0.5 * phase.cos());
    }
    w
}

/// Complex STFT, `[n_freq, frames]` row-major.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub n_freq: usize,
    pub frames: usize,
    pub bins: Vec<Complex<f64>>,
}

impl Spectrogram {
    pub fn at(&self, k: usize, frame: usize) -> Complex<f64> {
        self.bins[k * self.frames + frame]
    }
}

/// Hann-windowed STFT of a clip with reflect padding.
pub fn stft(audio: &AudioClip, cfg: &MelConfig) -> Result<Spectrogram> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    cfg.validate()?;
    let x: Vec<f64> = audio.samples.iter().map(|&s| s as f64).collect();
    let idx = padded_indices(x.len(), cfg);
    let padded: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let frames = frame_count(x.len(), cfg);
    let win = window::<f64>(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let n_freq = cfg.n_freq();
    let mut bins = vec![Complex::new(0.0, 0.0); n_freq * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for f in 0..frames {
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(padded[f * cfg.hop + n] * win[n], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_freq {
            bins[k * frames + f] = buf[k];
        }
    }
    Ok(Spectrogram {
        n_freq,
        frames,
        bins,
    })
}

/// Added under the square root so the magnitude is differentiable at zero.
const MAG_EPS: f64 = 1e-9;

/// Differentiable STFT magnitude of an already padded `[B, T_pad]` signal,
/// giving `[B, n_freq, frames]`.
pub(crate) struct StftMagnitude<T: Float> {
    n_fft: usize,
    hop: usize,
    window: Arc<Vec<T>>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Float> StftMagnitude<T> {
    pub(crate) fn new(cfg: &MelConfig) -> Self {
        let mut planner = FftPlanner::<T>::new();
        Self {
            n_fft: cfg.n_fft,
            hop: cfg.hop,
            window: Arc::new(window(cfg)),
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
        }
    }

    pub(crate) fn apply(&self, padded: &Tensor<T>) -> Result<Tensor<T>> {
        let s = padded.shape();
        if s.len() != 2 || s[1] < self.n_fft {
            return shape_err("stft_magnitude", format!("need [B, T>=n_fft], got {s:?}"));
        }
        let (batch, len) = (s[0], s[1]);
        let (n_fft, hop) = (self.n_fft, self.hop);
        let frames = (len - n_fft) / hop + 1;
        let n_freq = n_fft / 2 + 1;
        let eps = T::of(MAG_EPS);
        let zero = Complex::new(T::zero(), T::zero());
        // spectra[b][f][k]
        let mut spectra = vec![zero; batch * frames * n_freq];
        let mut mag = vec![T::zero(); batch * n_freq * frames];
        {
            let x = padded.data();
            let mut buf = vec![zero; n_fft];
            for b in 0..batch {
                for f in 0..frames {
                    let src = &x[b * len + f * hop..][..n_fft];
                    for ((dst, &v), &w) in buf.iter_mut().zip(src).zip(self.window.iter()) {
                        *dst = Complex::new(v * w, T::zero());
                    }
                    self.forward.process(&mut buf);
                    let row = (b * frames + f) * n_freq;
                    spectra[row..row + n_freq].copy_from_slice(&buf[..n_freq]);
                    for k in 0..n_freq {
                        let c = buf[k];
                        mag[(b * n_freq + k) * frames + f] =
                            (c.re * c.re + c.im * c.im + eps).sqrt();
                    }
                }
            }
        }
        let window = Arc::clone(&self.window);
        let inverse = Arc::clone(&self.inverse);
        let mag_saved = mag.clone();
        Ok(Tensor::from_op(
            vec![batch, n_freq, frames],
            mag,
            "stft_magnitude",
            vec![padded.clone()],
            move |g, _| {
                // grad_y[n] = Re(sum_k C_k e^{+2πikn/N}), C_k = g_k X_k / |X_k| over
                // the kept bins: an unnormalized inverse FFT.
                let mut gx = vec![T::zero(); batch * len];
                let mut buf = vec![zero; n_fft];
                for b in 0..batch {
                    for f in 0..frames {
                        buf.fill(zero);
                        let row = (b * frames + f) * n_freq;
                        for k in 0..n_freq {
                            let gi = (b * n_freq + k) * frames + f;
                            let scale = g[gi] / mag_saved[gi];
                            buf[k] = spectra[row + k] * scale;
                        }
                        inverse.process(&mut buf);
                        let dst = &mut gx[b * len + f * hop..][..n_fft];
                        for ((d, c), &w) in dst.iter_mut().zip(&buf).zip(window.iter()) {
                            *d += c.re * w;
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}
