use ganvoc::gradcheck::GradCheck;
use ganvoc::signal::{
    frequency_response, mel_filterbank, mel_spectrogram, padded_indices, stft, MelExtractor,
};
use ganvoc::{AudioClip, MelConfig, Tensor};
use proptest::prelude::*;

fn small_cfg() -> MelConfig {
    MelConfig {
        sample_rate: 16000,
        n_fft: 32,
        win_size: 32,
        hop: 8,
        n_mels: 6,
        fmin: 0.0,
        fmax: 8000.0,
    }
}

fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

#[test]
fn stft_matches_direct_dft() {
    let cfg = small_cfg();
    let samples: Vec<f32> = (0..53)
        .map(|i| ((i * 37 % 17) as f32 / 17.0) - 0.4)
        .collect();
    let clip = AudioClip::new(16000, samples.clone()).unwrap();
    let spec = stft(&clip, &cfg).unwrap();
    let idx = padded_indices(samples.len(), &cfg);
    for f in 0..spec.frames {
        let frame: Vec<f64> = (0..cfg.n_fft)
            .map(|n| {
                let w =
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / cfg.n_fft as f64).cos();
                samples[idx[f * cfg.hop + n]] as f64 * w
            })
            .collect();
        let want = naive_dft(&frame);
        for k in 0..spec.n_freq {
            let got = spec.at(k, f);
            assert!(
                (got.re - want[k].0).abs() < 1e-9 && (got.im - want[k].1).abs() < 1e-9,
                "frame {f} bin {k}"
            );
        }
    }
}

#[test]
fn frequency_response_matches_direct_dft() {
    let x: Vec<f64> = (0..21)
        .map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64)
        .collect();
    let got = frequency_response(&x);
    let want = naive_dft(&x);
    assert_eq!(got.len(), 11);
    for (g, (re, im)) in got.iter().zip(want) {
        assert!((g - (re * re + im * im).sqrt()).abs() < 1e-9);
    }
}

#[test]
fn mel_matches_reference_pipeline() {
    let cfg = small_cfg();
    let samples: Vec<f32> = (0..64).map(|i| (i as f32 * 0.3).sin() * 0.5).collect();
    let mel = mel_spectrogram(&AudioClip::new(16000, samples.clone()).unwrap(), &cfg).unwrap();
    let fb = mel_filterbank(&cfg).unwrap();
    let spec = stft(&AudioClip::new(16000, samples).unwrap(), &cfg).unwrap();
    for m in 0..cfg.n_mels {
        for f in 0..spec.frames {
            let e: f64 = (0..spec.n_freq)
                .map(|k| fb[m * spec.n_freq + k] * (spec.at(k, f).norm_sqr() + 1e-9).sqrt())
                .sum();
            let want = e.max(1e-5).ln();
            assert!((mel.values[m * mel.frames + f] as f64 - want).abs() < 1e-5);
        }
    }
}

#[test]
fn mel_gradient_matches_finite_differences() {
    let cfg = small_cfg();
    let ex = MelExtractor::<f64>::new(&cfg).unwrap();
    let x = Tensor::param(
        (0..40)
            .map(|i| (i as f64 * 0.45).cos() * 0.6 + 0.05 * i as f64)
            .collect(),
        &[1, 40],
    )
    .unwrap();
    let r = GradCheck::default()
        .run(std::slice::from_ref(&x), || {
            let m = ex.forward(&x)?;
            let w = Tensor::new(
                (0..m.numel())
                    .map(|i| ((i * 13) % 7) as f64 - 3.0)
                    .collect(),
                m.shape(),
            )?;
            Ok(m.mul(&w)?.sum())
        })
        .unwrap();
    assert!(r.passed(), "{r:?}");
}

proptest! {
    #[test]
    fn frames_are_ceil_len_over_hop(len in 1usize..3000) {
        let cfg = MelConfig::default();
        let clip = AudioClip::new(22050, vec![0.1; len]).unwrap();
        let mel = mel_spectrogram(&clip, &cfg).unwrap();
        prop_assert_eq!(mel.frames, len.div_ceil(256));
    }

    #[test]
    fn mel_values_are_bounded_below(samples in proptest::collection::vec(-1.0f32..1.0, 1..600)) {
        let mel = mel_spectrogram(&AudioClip::new(22050, samples).unwrap(), &MelConfig::default()).unwrap();
        let floor = (1e-5f64).ln() as f32;
        prop_assert!(mel.values.iter().all(|v| v.is_finite() && *v >= floor));
    }
}
