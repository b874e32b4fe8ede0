use ganvoc::experiments::periodic::{
    train_classifier, ClassifierConfig, ToneConfig, ToneDataset, DEFAULT_RATIOS,
};
use ganvoc::experiments::sinc::{pooled_high_band_retention, signal_views, SincTarget, PERIODS};
use ganvoc::experiments::{write_columns, DiscKind};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn dft(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(x.len())
        .process(&mut buf);
    buf
}

#[test]
fn every_eval_split_is_balanced() {
    for &r in DEFAULT_RATIOS.iter().chain(&[0.5]) {
        for seed in 0..2 {
            let d = ToneDataset::generate(&ToneConfig::full(r), seed).unwrap();
            assert_eq!(d.eval.len(), 8000);
            assert_eq!(
                d.eval.iter().filter(|t| t.label).count(),
                4000,
                "ratio {r} seed {seed}"
            );
            assert_eq!(d.train.len(), 40_000);
        }
    }
}

#[test]
fn decimated_views_only_alias_the_spectrum() {
    // the DFT of x[pn] is the average of the p shifted copies of X
    let t = SincTarget::new();
    let x = dft(&t.values);
    let n = x.len();
    let views = signal_views(DiscKind::Mpd, &t.values).unwrap();
    for ((_, v), p) in views.iter().zip(PERIODS) {
        let y = dft(v);
        let m = n / p;
        assert_eq!(y.len(), m);
        for (k, yk) in y.iter().enumerate() {
            let folded: Complex<f64> =
                (0..p).map(|s| x[k + s * m]).sum::<Complex<f64>>() / p as f64;
            assert!((yk - folded).norm() < 1e-9, "period {p} bin {k}");
        }
    }
}

#[test]
fn pooling_suppresses_the_upper_half_of_the_pooled_band() {
    let t = SincTarget::new();
    let views = signal_views(DiscKind::Msd, &t.values).unwrap();
    assert_eq!(views[0].1, t.values);
    assert_eq!(
        views.iter().map(|v| v.1.len()).collect::<Vec<_>>(),
        [1000, 501, 251]
    );
    let r = pooled_high_band_retention(&t).unwrap();
    assert!(r > 0.0 && r < 0.25, "retention {r}");
}

#[test]
fn classifier_learns_a_frequency_band_split() {
    let cfg = ToneConfig {
        n_train: 2000,
        n_eval: 400,
        clip_len: 1024,
        ..ToneConfig::fast(0.99)
    };
    let mut d = ToneDataset::generate(&cfg, 3).unwrap();
    for t in d.train.iter_mut().chain(d.eval.iter_mut()) {
        t.label = t.freq < 4000;
    }
    let tc = ClassifierConfig {
        epochs: 2,
        batch_size: 16,
        lr: 1e-3,
        width_div: 8,
    };
    for kind in DiscKind::BOTH {
        let r = train_classifier(kind, &d, &tc, 3).unwrap();
        assert!(r.accuracy > 0.7, "{kind}: {}", r.accuracy);
    }
}

#[test]
fn columns_are_written_with_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.txt");
    write_columns(&p, &["a", "b"], &[&[1.0, 2.0], &[3.0]]).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# a b");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].ends_with("nan"));
}
