//! Adversarial training: segment sampling, the alternating discriminator /
//! generator update and trainer checkpoints.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::checkpoint::Checkpoint;
use crate::discriminators::{DiscriminatorConfig, Discriminators};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig, HOP};
use crate::losses::{mel_loss, total_d_loss, total_g_loss, LossWeights};
use crate::nn::{Module, Parameter};
use crate::optim::{lr_schedule, AdamW, AdamWConfig};
use crate::signal::{mel_spectrogram, MelConfig, MelExtractor, MelSpec};
use crate::tensor::{no_grad, Float, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub segment_length: usize,
    pub batch_size: usize,
    pub steps: u64,
    /// Steps per epoch for the learning-rate decay; 0 derives it from the
    /// number of clips and the batch size.
    pub steps_per_epoch: u64,
    pub seed: u64,
    pub mrf_single_block: bool,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 2e-4,
            lr_decay: 0.999,
            segment_length: 8192,
            batch_size: 4,
            steps: 1000,
            steps_per_epoch: 0,
            seed: 1234,
            mrf_single_block: false,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if self.segment_length == 0 || !self.segment_length.is_multiple_of(HOP) {
            return bad(format!(
                "segment_length {} must be a positive multiple of {HOP}",
                self.segment_length
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.initial_lr > 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!(
                "need initial_lr > 0 and 0 < lr_decay <= 1, got {} / {}",
                self.initial_lr, self.lr_decay
            ));
        }
        Ok(())
    }
}

/// A random hop-aligned crop of `clip` (right-padded with zeros when the
/// clip is shorter) and its conditioning spectrogram.
pub fn sample_segment(
    clip: &AudioClip,
    segment_length: usize,
    cfg: &MelConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<f32>, MelSpec)> {
    let mut seg = vec![0.0f32; segment_length];
    if clip.len() >= segment_length {
        let offset = rng.gen_range(0..=(clip.len() - segment_length) / HOP) * HOP;
        seg.copy_from_slice(&clip.samples[offset..offset + segment_length]);
    } else {
        seg[..clip.len()].copy_from_slice(&clip.samples);
    }
    let mel = mel_spectrogram(&AudioClip::new(clip.sample_rate, seg.clone())?, cfg)?;
    Ok((seg, mel))
}

/// Draws batches of segments from a fixed set of clips with a seeded stream.
pub struct Batcher {
    rng: ChaCha8Rng,
    segment_length: usize,
    mel: MelConfig,
}

impl Batcher {
    pub fn new(seed: u64, segment_length: usize, mel: &MelConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            segment_length,
            mel: mel.clone(),
        }
    }

    /// `([B, 1, L] audio, [B, n_mels, L/256] mel)`.
    pub fn next<T: Float>(
        &mut self,
        clips: &[AudioClip],
        batch: usize,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if clips.is_empty() {
            return Err(Error::Config("no training clips".into()));
        }
        let mut audio = Vec::with_capacity(batch * self.segment_length);
        let mut mels = Vec::new();
        let mut frames = 0;
        for _ in 0..batch {
            let clip = &clips[self.rng.gen_range(0..clips.len())];
            let (seg, mel) = sample_segment(clip, self.segment_length, &self.mel, &mut self.rng)?;
            audio.extend(seg.iter().map(|&s| T::of(s as f64)));
            mels.extend(mel.values.iter().map(|&v| T::of(v as f64)));
            frames = mel.frames;
        }
        Ok((
            Tensor::new(audio, &[batch, 1, self.segment_length])?,
            Tensor::new(mels, &[batch, self.mel.n_mels, frames])?,
        ))
    }
}

/// One line of training output.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_mel: f64,
    pub loss_fm: f64,
    pub loss_adv: f64,
    pub lr: f64,
    pub ms: f64,
}

impl Metrics {
    /// Everything except the wall-clock time.
    pub fn values(&self) -> [f64; 7] {
        [
            self.step as f64,
            self.loss_d,
            self.loss_g,
            self.loss_mel,
            self.loss_fm,
            self.loss_adv,
            self.lr,
        ]
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} loss_d={:.6} loss_g={:.6} loss_mel={:.6} loss_fm={:.6} loss_adv={:.6} lr={:.6e} ms={:.1}",
            self.step, self.loss_d, self.loss_g, self.loss_mel, self.loss_fm, self.loss_adv, self.lr, self.ms
        )
    }
}

fn finite(term: &'static str, step: u64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, step })
    }
}

/// Stores each `f64` exactly as the bit patterns of two `f32` halves.
fn split_f64(v: &[f64]) -> Vec<f32> {
    v.iter()
        .flat_map(|x| {
            let b = x.to_bits();
            [f32::from_bits(b as u32), f32::from_bits((b >> 32) as u32)]
        })
        .collect()
}

fn join_f64(v: &[f32]) -> Vec<f64> {
    v.chunks_exact(2)
        .map(|c| f64::from_bits(c[0].to_bits() as u64 | (c[1].to_bits() as u64) << 32))
        .collect()
}

pub struct Trainer<T: Float> {
    pub generator: Generator<T>,
    pub discriminators: Discriminators<T>,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    pub weights: LossWeights,
    loss_mel: MelExtractor<T>,
    initial_lr: f64,
    lr_decay: f64,
    steps_per_epoch: u64,
    step: u64,
}

impl<T: Float> Trainer<T> {
    /// `mel` is the conditioning analysis; the mel loss uses the same
    /// analysis extended to the full band.
    pub fn new(
        gen_cfg: &GeneratorConfig,
        disc_cfg: &DiscriminatorConfig,
        mel: &MelConfig,
        train: &TrainConfig,
        weights: LossWeights,
    ) -> Result<Self> {
        train.validate()?;
        weights.validate()?;
        let gen_cfg = if train.mrf_single_block {
            gen_cfg.single_block()
        } else {
            gen_cfg.clone()
        };
        let generator = Generator::new(&gen_cfg, train.seed)?;
        let discriminators = Discriminators::new(disc_cfg, train.seed.wrapping_add(1))?;
        let opt = AdamWConfig {
            lr: train.initial_lr,
            ..AdamWConfig::default()
        };
        Ok(Self {
            opt_g: AdamW::new(opt, &generator.parameters()),
            opt_d: AdamW::new(opt, &discriminators.parameters()),
            generator,
            discriminators,
            weights,
            loss_mel: MelExtractor::new(&mel.full_band())?,
            initial_lr: train.initial_lr,
            lr_decay: train.lr_decay,
            steps_per_epoch: train.steps_per_epoch.max(1),
            step: 0,
        })
    }

    pub fn set_steps_per_epoch(&mut self, n: u64) {
        self.steps_per_epoch = n.max(1);
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(
            self.initial_lr,
            self.lr_decay,
            self.step / self.steps_per_epoch,
        )
    }

    /// One discriminator update followed by one generator update on a batch
    /// of `[B, 1, L]` audio and its `[B, n_mels, L/256]` spectrogram.
    pub fn train_step(&mut self, audio: &Tensor<T>, mel: &Tensor<T>) -> Result<Metrics> {
        let start = Instant::now();
        let step = self.step;
        let lr = self.lr();
        self.opt_g.cfg.lr = lr;
        self.opt_d.cfg.lr = lr;

        let y_hat = self.generator.forward(mel)?;
        if y_hat.shape() != audio.shape() {
            return Err(Error::Config(format!(
                "audio {:?} does not match generated {:?}",
                audio.shape(),
                y_hat.shape()
            )));
        }

        let d_params = self.discriminators.parameters();
        self.discriminators.zero_grad();
        let real = self.discriminators.forward(audio)?;
        let fake = self.discriminators.forward(&y_hat.detach())?;
        let loss_d = total_d_loss(&real, &fake)?;
        finite("loss_d", step, loss_d.item())?;
        loss_d.backward()?;
        self.opt_d.step(&d_params)?;

        // The discriminators are frozen so the generator loss only records
        // gradients for the generator and the signal path.
        self.discriminators.set_requires_grad(false);
        let g = self.generator_loss(audio, &y_hat, step);
        self.discriminators.set_requires_grad(true);
        let g = g?;
        self.opt_g.step(&self.generator.parameters())?;
        self.step += 1;
        Ok(Metrics {
            step,
            loss_d: loss_d.item(),
            loss_g: g.0,
            loss_mel: g.1,
            loss_fm: g.2,
            loss_adv: g.3,
            lr,
            ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn generator_loss(
        &self,
        audio: &Tensor<T>,
        y_hat: &Tensor<T>,
        step: u64,
    ) -> Result<(f64, f64, f64, f64)> {
        self.generator.zero_grad();
        let real = no_grad(|| self.discriminators.forward(audio))?;
        let fake = self.discriminators.forward(y_hat)?;
        let mel = mel_loss(&self.loss_mel, audio, y_hat)?;
        let g = total_g_loss(&fake, &real, &mel, self.weights)?;
        finite("loss_mel", step, g.mel)?;
        finite("loss_fm", step, g.fm)?;
        finite("loss_adv", step, g.adv)?;
        let total = finite("loss_g", step, g.total.item())?;
        g.total.backward()?;
        Ok((total, g.mel, g.fm, g.adv))
    }

    fn optimizer_entries(
        ckpt: &mut Checkpoint,
        prefix: &str,
        opt: &AdamW,
        params: &[Parameter<T>],
    ) {
        for (i, p) in params.iter().enumerate() {
            ckpt.push(
                format!("{prefix}.m.{}", p.name),
                &[opt.m[i].len(), 2],
                split_f64(&opt.m[i]),
            );
            ckpt.push(
                format!("{prefix}.v.{}", p.name),
                &[opt.v[i].len(), 2],
                split_f64(&opt.v[i]),
            );
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        let (gp, dp) = (
            self.generator.parameters(),
            self.discriminators.parameters(),
        );
        c.extend(&gp);
        c.extend(&dp);
        c.extend(&self.discriminators.buffers());
        Self::optimizer_entries(&mut c, "opt_g", &self.opt_g, &gp);
        Self::optimizer_entries(&mut c, "opt_d", &self.opt_d, &dp);
        for (name, v) in [
            ("trainer.step", self.step),
            ("opt_g.step", self.opt_g.step),
            ("opt_d.step", self.opt_d.step),
        ] {
            c.push(name, &[2], split_f64(&[f64::from_bits(v)]));
        }
        c
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Restores models, spectral-norm state, optimizer moments and counters.
    pub fn restore(&mut self, c: &Checkpoint) -> Result<()> {
        let (gp, dp) = (
            self.generator.parameters(),
            self.discriminators.parameters(),
        );
        let mut models = gp.clone();
        models.extend(dp.iter().cloned());
        models.extend(self.discriminators.buffers());
        c.restore(&models, &["gen.", "mpd.", "msd."])?;
        for (prefix, opt, params) in [
            ("opt_g", &mut self.opt_g, &gp),
            ("opt_d", &mut self.opt_d, &dp),
        ] {
            for (i, p) in params.iter().enumerate() {
                for (kind, dst) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                    let name = format!("{prefix}.{kind}.{}", p.name);
                    let e = c
                        .get(&name)
                        .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))?;
                    if e.data.len() != 2 * dst.len() {
                        return Err(Error::Checkpoint(format!("{name}: wrong size")));
                    }
                    *dst = join_f64(&e.data);
                }
            }
        }
        let counter = |name: &str| -> Result<u64> {
            let e = c
                .get(name)
                .filter(|e| e.data.len() == 2)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))?;
            Ok(join_f64(&e.data)[0].to_bits())
        };
        self.step = counter("trainer.step")?;
        self.opt_g.step = counter("opt_g.step")?;
        self.opt_d.step = counter("opt_d.step")?;
        Ok(())
    }
}

/// Loads generator weights from a generator-only or full training checkpoint.
pub fn load_generator<T: Float>(
    cfg: &GeneratorConfig,
    path: impl AsRef<Path>,
) -> Result<Generator<T>> {
    let c = Checkpoint::load(path)?;
    let g = Generator::new(cfg, 0)?;
    c.restore(&g.parameters(), &["gen."])?;
    Ok(g)
}
