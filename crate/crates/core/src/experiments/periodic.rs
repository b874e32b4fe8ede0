//! Binary classification of pure tones by frequency.
//!
//! A random subset of the integer frequencies in `[f_min, f_max]` is labelled
//! false. Training tones draw their frequency uniformly from the whole range,
//! so the false share matches `1 - true_ratio`; the evaluation split is
//! balanced. Each classifier is a discriminator stack whose score maps are
//! averaged per sub-discriminator, summed, and passed through a scalar
//! affine head trained with squared error against {0, 1}.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discriminators::{DiscriminatorConfig, Discriminators};
use crate::error::{Error, Result};
use crate::nn::{Module, Parameter};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::{no_grad, squared_error, Tensor};

use super::DiscKind;

pub const DEFAULT_RATIOS: [f64; 3] = [0.99, 0.995, 0.999];

#[derive(Clone, Debug, PartialEq)]
pub struct ToneConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub sample_rate: u32,
    pub clip_len: usize,
    pub f_min: u32,
    pub f_max: u32,
    pub true_ratio: f64,
}

impl ToneConfig {
    pub fn full(true_ratio: f64) -> Self {
        Self {
            n_train: 40_000,
            n_eval: 8_000,
            sample_rate: 22_050,
            clip_len: 8192,
            f_min: 1,
            f_max: 8000,
            true_ratio,
        }
    }

    /// Ten times fewer clips, eight times shorter.
    pub fn fast(true_ratio: f64) -> Self {
        Self {
            n_train: 4_000,
            n_eval: 800,
            clip_len: 1024,
            ..Self::full(true_ratio)
        }
    }

    pub fn n_frequencies(&self) -> usize {
        (self.f_max - self.f_min + 1) as usize
    }

    /// Number of frequencies labelled false, at least one.
    pub fn n_false(&self) -> usize {
        let n = self.n_frequencies();
        (((1.0 - self.true_ratio) * n as f64).round() as usize).clamp(1, n - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("tones: {m}")));
        if !(self.true_ratio > 0.0 && self.true_ratio < 1.0) {
            return bad(format!("true_ratio {} must lie in (0, 1)", self.true_ratio));
        }
        if self.f_min == 0 || self.f_min >= self.f_max || 2 * self.f_max > self.sample_rate {
            return bad(format!(
                "frequency range {}..={} Hz invalid at {} Hz",
                self.f_min, self.f_max, self.sample_rate
            ));
        }
        if self.n_train == 0 || self.n_eval == 0 || !self.n_eval.is_multiple_of(2) {
            return bad(format!(
                "need n_train > 0 and an even n_eval > 0, got {} / {}",
                self.n_train, self.n_eval
            ));
        }
        if self.clip_len == 0 {
            return bad("clip_len must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tone {
    pub freq: u32,
    pub amplitude: f64,
    pub phase: f64,
    pub label: bool,
}

impl Tone {
    pub fn render(&self, sample_rate: u32, len: usize) -> Vec<f32> {
        let w = 2.0 * PI * self.freq as f64 / sample_rate as f64;
        (0..len)
            .map(|n| (self.amplitude * (w * n as f64 + self.phase).sin()) as f32)
            .collect()
    }
}

pub struct ToneDataset {
    pub cfg: ToneConfig,
    /// `is_true[f - f_min]`.
    pub is_true: Vec<bool>,
    pub train: Vec<Tone>,
    pub eval: Vec<Tone>,
}

impl ToneDataset {
    pub fn generate(cfg: &ToneConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.n_frequencies();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut is_true = vec![true; n];
        for &i in &order[..cfg.n_false()] {
            is_true[i] = false;
        }
        let falses: Vec<u32> = (0..n)
            .filter(|&i| !is_true[i])
            .map(|i| cfg.f_min + i as u32)
            .collect();
        let trues: Vec<u32> = (0..n)
            .filter(|&i| is_true[i])
            .map(|i| cfg.f_min + i as u32)
            .collect();

        let tone = |freq: u32, rng: &mut ChaCha8Rng| Tone {
            freq,
            amplitude: rng.gen_range(0.1..=1.0),
            phase: rng.gen_range(0.0..2.0 * PI),
            label: is_true[(freq - cfg.f_min) as usize],
        };
        let train = (0..cfg.n_train)
            .map(|_| {
                let f = rng.gen_range(cfg.f_min..=cfg.f_max);
                tone(f, &mut rng)
            })
            .collect();
        let half = cfg.n_eval / 2;
        let mut eval: Vec<Tone> = (0..cfg.n_eval)
            .map(|i| {
                let pool = if i < half { &trues } else { &falses };
                let f = *pool
                    .choose(&mut rng)
                    .expect("both label sets are non-empty");
                tone(f, &mut rng)
            })
            .collect();
        eval.shuffle(&mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            is_true,
            train,
            eval,
        })
    }

    fn batch(&self, tones: &[Tone]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let len = self.cfg.clip_len;
        let audio = tones
            .iter()
            .flat_map(|t| t.render(self.cfg.sample_rate, len))
            .collect();
        let labels = tones
            .iter()
            .map(|t| if t.label { 1.0 } else { 0.0 })
            .collect();
        Ok((
            Tensor::new(audio, &[tones.len(), 1, len])?,
            Tensor::new(labels, &[tones.len()])?,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Divides the hidden widths of the discriminator stack.
    pub width_div: usize,
}

impl ClassifierConfig {
    pub fn full() -> Self {
        Self {
            epochs: 1,
            batch_size: 16,
            lr: 2e-4,
            width_div: 1,
        }
    }

    pub fn fast() -> Self {
        Self {
            epochs: 2,
            width_div: 8,
            ..Self::full()
        }
    }
}

/// A discriminator stack with a scalar projection head.
pub struct ToneClassifier {
    pub disc: Discriminators<f32>,
    pub scale: Tensor<f32>,
    pub shift: Tensor<f32>,
}

impl ToneClassifier {
    pub fn new(kind: DiscKind, width_div: usize, seed: u64) -> Result<Self> {
        let cfg = DiscriminatorConfig {
            use_mpd: kind == DiscKind::Mpd,
            use_msd: kind == DiscKind::Msd,
            width_div,
            ..Default::default()
        };
        Ok(Self {
            disc: Discriminators::new(&cfg, seed)?,
            scale: Tensor::param(vec![1.0], &[1])?,
            shift: Tensor::param(vec![0.0], &[1])?,
        })
    }

    /// `[B, 1, L] -> [B]` scores.
    pub fn forward(&self, audio: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut pooled: Option<Tensor<f32>> = None;
        for out in self.disc.forward(audio)? {
            let m = out.score_map.mean_per_item();
            pooled = Some(match pooled {
                Some(acc) => acc.add(&m)?,
                None => m,
            });
        }
        pooled
            .expect("at least one sub-discriminator")
            .mul(&self.scale)?
            .add(&self.shift)
    }
}

impl Module<f32> for ToneClassifier {
    fn parameters(&self) -> Vec<Parameter<f32>> {
        let mut p = self.disc.parameters();
        p.push(Parameter::new("head.scale", self.scale.clone()));
        p.push(Parameter::new("head.shift", self.shift.clone()));
        p
    }
}

#[derive(Clone, Debug)]
pub struct ToneRun {
    pub kind: DiscKind,
    pub true_ratio: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub final_train_loss: f64,
    pub steps: usize,
}

impl ToneRun {
    /// One `key=value` line with everything needed to reproduce the run.
    pub fn record(&self, data: &ToneConfig, train: &ClassifierConfig) -> String {
        format!(
            "experiment=tones kind={} true_ratio={} seed={} accuracy={:.6} train_loss={:.6e} steps={} n_train={} n_eval={} clip_len={} sample_rate={} epochs={} batch_size={} lr={} width_div={} head=mean_sum_affine loss=squared_error",
            self.kind,
            self.true_ratio,
            self.seed,
            self.accuracy,
            self.final_train_loss,
            self.steps,
            data.n_train,
            data.n_eval,
            data.clip_len,
            data.sample_rate,
            train.epochs,
            train.batch_size,
            train.lr,
            train.width_div
        )
    }
}

/// Trains one classifier on `data` and returns its eval accuracy.
pub fn train_classifier(
    kind: DiscKind,
    data: &ToneDataset,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<ToneRun> {
    let model = ToneClassifier::new(kind, cfg.width_div, seed)?;
    let params = model.parameters();
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            ..AdamWConfig::default()
        },
        &params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let (mut steps, mut last) = (0, f64::NAN);
    model.disc.set_training(true);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let tones: Vec<Tone> = chunk.iter().map(|&i| data.train[i]).collect();
            let (audio, labels) = data.batch(&tones)?;
            model.zero_grad();
            let loss = squared_error(&model.forward(&audio)?, &labels)?;
            loss.backward()?;
            opt.step(&params)?;
            last = loss.item();
            if !last.is_finite() {
                return Err(Error::NonFinite {
                    term: "classifier loss",
                    step: steps as u64,
                });
            }
            steps += 1;
        }
    }
    model.disc.set_training(false);
    let mut correct = 0;
    for chunk in data.eval.chunks(cfg.batch_size) {
        let (audio, _) = data.batch(chunk)?;
        let scores = no_grad(|| model.forward(&audio))?;
        correct += scores
            .data()
            .iter()
            .zip(chunk)
            .filter(|(&s, t)| (s >= 0.5) == t.label)
            .count();
    }
    Ok(ToneRun {
        kind,
        true_ratio: data.cfg.true_ratio,
        seed,
        accuracy: correct as f64 / data.eval.len() as f64,
        final_train_loss: last,
        steps,
    })
}

/// Mean eval accuracy of both classifiers for one label ratio.
#[derive(Clone, Debug)]
pub struct ToneRow {
    pub true_ratio: f64,
    pub runs: Vec<ToneRun>,
}

impl ToneRow {
    pub fn mean_accuracy(&self, kind: DiscKind) -> f64 {
        let accs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.accuracy)
            .collect();
        accs.iter().sum::<f64>() / accs.len() as f64
    }
}

/// `repeats` fresh datasets and model pairs for one ratio; repeat `r` uses
/// seed `seed + r` for both the data and the two models.
pub fn run_tones(
    data_cfg: &ToneConfig,
    train_cfg: &ClassifierConfig,
    repeats: usize,
    seed: u64,
    mut on_run: impl FnMut(&ToneRun),
) -> Result<ToneRow> {
    let mut runs = Vec::new();
    for r in 0..repeats as u64 {
        let data = ToneDataset::generate(data_cfg, seed + r)?;
        for kind in DiscKind::BOTH {
            let run = train_classifier(kind, &data, train_cfg, seed + r)?;
            on_run(&run);
            runs.push(run);
        }
    }
    Ok(ToneRow {
        true_ratio: data_cfg.true_ratio,
        runs,
    })
}

/// Accuracy table with one column per label ratio.
pub fn format_table(rows: &[ToneRow]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<8}", "Model");
    for r in rows {
        let _ = write!(s, " {:>9}", format!("{:.1}%", r.true_ratio * 100.0));
    }
    s.push('\n');
    for kind in DiscKind::BOTH {
        let _ = write!(s, "{:<8}", kind.to_string());
        for r in rows {
            let _ = write!(
                s,
                " {:>9}",
                format!("{:.2}%", r.mean_accuracy(kind) * 100.0)
            );
        }
        s.push('\n');
    }
    s
}
