//! Adversarial fit of a sinc target by a generator made of free parameters.
//!
//! Both discriminator families use three identical feed-forward
//! sub-discriminators. The period variant feeds every phase stream of the
//! target decimated by 1, 2 and 4 as a separate row; the scale variant feeds
//! the raw, ×2-pooled and ×4-pooled signal.

use std::f64::consts::PI;

use crate::discriminators::msd_pool;
use crate::error::Result;
use crate::nn::{Init, Linear, Module, NormKind, Parameter, INIT_STD, LRELU_SLOPE};
use crate::optim::{AdamW, AdamWConfig};
use crate::signal::{decimate, frequency_response};
use crate::tensor::{squared_error, Tensor};

use super::DiscKind;

pub const SINC_POINTS: usize = 1000;
pub const SINC_EXTENT: f64 = 200.0;
pub const PERIODS: [usize; 3] = [1, 2, 4];

/// `sin(πx) / (πx)`, 1 at the origin.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// The ground-truth signal on `SINC_POINTS` evenly spaced points of
/// `[-SINC_EXTENT, SINC_EXTENT]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SincTarget {
    pub domain: Vec<f64>,
    pub values: Vec<f64>,
}

impl SincTarget {
    pub fn new() -> Self {
        let last = (SINC_POINTS - 1) as f64;
        // written as a signed offset from the centre so x[i] == -x[n-1-i]
        let domain: Vec<f64> = (0..SINC_POINTS)
            .map(|i| SINC_EXTENT * (2.0 * i as f64 - last) / last)
            .collect();
        let values = domain.iter().map(|&x| sinc(x.abs())).collect();
        Self { domain, values }
    }

    /// Distance between neighbouring domain points.
    pub fn spacing(&self) -> f64 {
        2.0 * SINC_EXTENT / (SINC_POINTS - 1) as f64
    }
}

impl Default for SincTarget {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SincConfig {
    pub steps: usize,
    pub lr: f64,
    pub hidden: usize,
    /// Std of the generator's initial values.
    pub init_std: f64,
}

impl Default for SincConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            lr: 1e-3,
            hidden: 256,
            init_std: INIT_STD,
        }
    }
}

/// Three affine layers with leaky ReLU between them, one score per row.
pub struct FeedForward {
    pub layers: Vec<Linear<f64>>,
}

impl FeedForward {
    pub fn new(name: &str, fan_in: usize, hidden: usize, init: &mut Init) -> Result<Self> {
        let dims = [fan_in, hidden, hidden, 1];
        let layers = (0..3)
            .map(|i| {
                Linear::new(
                    format!("{name}.fc{i}"),
                    dims[i],
                    dims[i + 1],
                    NormKind::Plain,
                    init,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.leaky_relu(LRELU_SLOPE);
            }
        }
        Ok(h)
    }
}

impl Module<f64> for FeedForward {
    fn parameters(&self) -> Vec<Parameter<f64>> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }
}

/// The three discriminator inputs for `signal` (`[1, 1, L]`), each as a
/// `[rows, len]` matrix.
pub fn views(kind: DiscKind, signal: &Tensor) -> Result<Vec<Tensor>> {
    let len = signal.numel();
    match kind {
        DiscKind::Mpd => PERIODS
            .iter()
            .map(|&p| {
                let cols = len / p;
                let index = (0..p)
                    .flat_map(|c| (0..cols).map(move |j| c + j * p))
                    .collect();
                signal.gather(index, &[p, cols])
            })
            .collect(),
        DiscKind::Msd => {
            let mut x = signal.reshape(&[1, 1, len])?;
            let mut out = Vec::with_capacity(3);
            for i in 0..3 {
                if i > 0 {
                    x = msd_pool(&x)?;
                }
                let n = x.numel();
                out.push(x.reshape(&[1, n])?);
            }
            Ok(out)
        }
    }
}

fn view_lengths(kind: DiscKind) -> Result<Vec<usize>> {
    let probe = Tensor::zeros(&[1, 1, SINC_POINTS])?;
    Ok(views(kind, &probe)?.iter().map(|v| v.shape()[1]).collect())
}

pub struct SincDiscriminator {
    pub kind: DiscKind,
    pub subs: Vec<FeedForward>,
}

impl SincDiscriminator {
    pub fn new(kind: DiscKind, hidden: usize, init: &mut Init) -> Result<Self> {
        let subs = view_lengths(kind)?
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                FeedForward::new(
                    &format!("{}.d{i}", kind.to_string().to_lowercase()),
                    n,
                    hidden,
                    init,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind, subs })
    }

    pub fn forward(&self, signal: &Tensor) -> Result<Vec<Tensor>> {
        views(self.kind, signal)?
            .iter()
            .zip(&self.subs)
            .map(|(v, d)| d.forward(v))
            .collect()
    }
}

impl Module<f64> for SincDiscriminator {
    fn parameters(&self) -> Vec<Parameter<f64>> {
        self.subs.iter().flat_map(|d| d.parameters()).collect()
    }
}

/// Sum over sub-discriminators of the mean squared distance to `target`.
fn lsgan_term(scores: &[Tensor], target: f64) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for s in scores {
        let t = Tensor::new(vec![target; s.numel()], s.shape())?;
        let term = squared_error(s, &t)?;
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one sub-discriminator"))
}

/// One discriminator input for plotting: ground truth and learned signal
/// with their frequency responses.
#[derive(Clone, Debug)]
pub struct SincView {
    pub label: String,
    pub target: Vec<f64>,
    pub learned: Vec<f64>,
    pub target_response: Vec<f64>,
    pub learned_response: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SincRun {
    pub kind: DiscKind,
    pub seed: u64,
    pub target: SincTarget,
    pub learned: Vec<f64>,
    pub views: Vec<SincView>,
    /// `||learned - target|| / ||target||`.
    pub rel_l2: f64,
    pub final_loss_d: f64,
    pub final_loss_g: f64,
}

impl SincRun {
    /// One `key=value` line describing the run.
    pub fn record(&self, cfg: &SincConfig) -> String {
        format!(
            "experiment=sinc kind={} seed={} steps={} lr={} hidden={} init_std={} rel_l2={:.9e} loss_d={:.6e} loss_g={:.6e}",
            self.kind, self.seed, cfg.steps, cfg.lr, cfg.hidden, cfg.init_std, self.rel_l2, self.final_loss_d, self.final_loss_g
        )
    }
}

pub fn relative_l2(x: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Decimated (phase 0) or pooled views as plain vectors, labelled.
pub fn signal_views(kind: DiscKind, signal: &[f64]) -> Result<Vec<(String, Vec<f64>)>> {
    Ok(match kind {
        DiscKind::Mpd => PERIODS
            .iter()
            .map(|&p| (format!("period{p}"), decimate(signal, p, 0)))
            .collect(),
        DiscKind::Msd => {
            let t = Tensor::new(signal.to_vec(), &[1, 1, signal.len()])?;
            views(kind, &t)?
                .iter()
                .zip([1, 2, 4])
                .map(|(v, s)| (format!("pool{s}"), v.to_vec()))
                .collect()
        }
    })
}

/// Trains a free-parameter generator against `kind` with the least-squares
/// adversarial objective only.
pub fn run_sinc(kind: DiscKind, seed: u64, cfg: &SincConfig) -> Result<SincRun> {
    let target = SincTarget::new();
    let real = Tensor::new(target.values.clone(), &[1, 1, SINC_POINTS])?;
    let gen = Tensor::param(
        Init::with_std(seed, cfg.init_std).normal(SINC_POINTS),
        &[1, 1, SINC_POINTS],
    )?;
    let gen_params = vec![Parameter::new("gen.values", gen.clone())];
    let disc = SincDiscriminator::new(kind, cfg.hidden, &mut Init::new(seed.wrapping_add(1)))?;
    let d_params = disc.parameters();
    let opt_cfg = AdamWConfig {
        lr: cfg.lr,
        ..AdamWConfig::default()
    };
    let mut opt_g = AdamW::new(opt_cfg, &gen_params);
    let mut opt_d = AdamW::new(opt_cfg, &d_params);
    let (mut loss_d, mut loss_g) = (f64::NAN, f64::NAN);

    for _ in 0..cfg.steps {
        disc.zero_grad();
        let fake = gen.detach();
        let ld = lsgan_term(&disc.forward(&real)?, 1.0)?
            .add(&lsgan_term(&disc.forward(&fake)?, 0.0)?)?;
        ld.backward()?;
        opt_d.step(&d_params)?;
        loss_d = ld.item();

        disc.set_requires_grad(false);
        gen.zero_grad();
        let lg = lsgan_term(&disc.forward(&gen)?, 1.0)?;
        lg.backward()?;
        disc.set_requires_grad(true);
        opt_g.step(&gen_params)?;
        loss_g = lg.item();
    }

    let learned = gen.to_vec();
    let views = signal_views(kind, &target.values)?
        .into_iter()
        .zip(signal_views(kind, &learned)?)
        .map(|((label, t), (_, l))| SincView {
            label,
            target_response: frequency_response(&t),
            learned_response: frequency_response(&l),
            target: t,
            learned: l,
        })
        .collect();
    Ok(SincRun {
        kind,
        seed,
        rel_l2: relative_l2(&learned, &target.values),
        target,
        learned,
        views,
        final_loss_d: loss_d,
        final_loss_g: loss_g,
    })
}

/// Energy of `signal` (sample spacing `spacing`) between absolute
/// frequencies `lo` and `hi`, normalized so the full band sums to
/// `spacing · Σ x²`.
pub fn band_energy(signal: &[f64], spacing: f64, lo: f64, hi: f64) -> f64 {
    let n = signal.len();
    let mag = frequency_response(signal);
    let df = 1.0 / (n as f64 * spacing);
    mag.iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * df;
            f >= lo && f <= hi
        })
        .map(|(k, m)| {
            // bins other than DC and Nyquist stand for a ± pair
            let both = k != 0 && !(n.is_multiple_of(2) && k == n / 2);
            let w = if both { 2.0 } else { 1.0 };
            w * m * m
        })
        .sum::<f64>()
        * spacing
        / n as f64
}

/// Fraction of the raw target's energy in the upper half of the ×4-pooled
/// view's band that survives in that view.
pub fn pooled_high_band_retention(target: &SincTarget) -> Result<f64> {
    let pooled = signal_views(DiscKind::Msd, &target.values)?
        .pop()
        .expect("three views")
        .1;
    let dx = target.spacing();
    let pooled_dx = 4.0 * dx;
    let nyquist = 1.0 / (2.0 * pooled_dx);
    let raw = band_energy(&target.values, dx, nyquist / 2.0, nyquist);
    Ok(band_energy(&pooled, pooled_dx, nyquist / 2.0, nyquist) / raw)
}
