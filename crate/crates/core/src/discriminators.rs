//! Multi-period (MPD) and multi-scale (MSD) discriminators.
//!
//! Every sub-discriminator returns its un-pooled score map together with the
//! activations of each layer, which the feature-matching loss pairs up
//! positionally.

use crate::error::{shape_err, Error, Result};
use crate::nn::{Conv1d, Conv2dKx1, Init, Module, NormKind, Parameter, LRELU_SLOPE};
use crate::signal::reflect;
use crate::tensor::{avg_pool1d, ConvParams, Float, Tensor};

pub const DEFAULT_PERIODS: [usize; 5] = [2, 3, 5, 7, 11];

/// Output of one sub-discriminator.
#[derive(Clone)]
pub struct DiscriminatorOutput<T: Float> {
    /// Per-window scores, not averaged.
    pub score_map: Tensor<T>,
    /// Activation of every layer, ending with the score map.
    pub features: Vec<Tensor<T>>,
}

/// Which sub-discriminators exist and how wide they are.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub use_mpd: bool,
    pub use_msd: bool,
    pub periods: Vec<usize>,
    /// Divides every hidden channel count (1 = full size).
    pub width_div: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            use_mpd: true,
            use_msd: true,
            periods: DEFAULT_PERIODS.to_vec(),
            width_div: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.use_mpd && !self.use_msd {
            return Err(Error::Config(
                "at least one of use_mpd / use_msd must be set".into(),
            ));
        }
        if self.use_mpd {
            if self.periods.is_empty() || self.periods[0] == 0 {
                return Err(Error::Config(
                    "periods must be positive and non-empty".into(),
                ));
            }
            if self.periods.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "periods {:?} must be strictly increasing",
                    self.periods
                )));
            }
        }
        if self.width_div == 0 || 16 % self.width_div != 0 {
            return Err(Error::Config(format!(
                "width_div {} must divide 16",
                self.width_div
            )));
        }
        Ok(())
    }

    /// Number of sub-discriminators.
    pub fn count(&self) -> usize {
        let mpd = if self.use_mpd { self.periods.len() } else { 0 };
        mpd + if self.use_msd { 3 } else { 0 }
    }
}

/// `[B, 1, T] -> [B, 1, ceil(T/p), p]`; row `r`, column `c` holds sample
/// `r p + c`, with the tail reflect-padded when `p` does not divide `T`.
pub fn period_reshape<T: Float>(audio: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let s = audio.shape();
    if s.len() != 3 || s[1] != 1 {
        return shape_err("period_reshape", format!("expected [B,1,T], got {s:?}"));
    }
    if p == 0 {
        return shape_err("period_reshape", "period must be >= 1");
    }
    let (b, t) = (s[0], s[2]);
    let rows = t.div_ceil(p);
    let index = (0..b)
        .flat_map(|bi| (0..rows * p).map(move |i| bi * t + reflect(i as isize, t)))
        .collect();
    audio.gather(index, &[b, 1, rows, p])
}

/// Runs layers with leaky ReLU in between, recording every activation.
fn run_stack<T: Float, L>(
    x: &Tensor<T>,
    layers: &[L],
    post: &L,
    f: impl Fn(&L, &Tensor<T>) -> Result<Tensor<T>>,
) -> Result<DiscriminatorOutput<T>> {
    let mut features = Vec::with_capacity(layers.len() + 1);
    let mut x = x.clone();
    for l in layers {
        x = f(l, &x)?.leaky_relu(LRELU_SLOPE);
        features.push(x.clone());
    }
    let score_map = f(post, &x)?;
    features.push(score_map.clone());
    Ok(DiscriminatorOutput {
        score_map,
        features,
    })
}

/// Sub-discriminator over the period-`p` reshaped signal. Kernels are `K×1`,
/// so each column (one phase of the signal) is processed with shared
/// weights and no mixing across columns.
pub struct PeriodDiscriminator<T: Float> {
    pub period: usize,
    pub convs: Vec<Conv2dKx1<T>>,
    pub post: Conv2dKx1<T>,
}

impl<T: Float> PeriodDiscriminator<T> {
    pub fn new(period: usize, width_div: usize, init: &mut Init) -> Result<Self> {
        let prefix = format!("mpd.p{period}");
        let ch: Vec<usize> = [1, 32, 128, 512, 1024, 1024]
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == 0 { c } else { (c / width_div).max(1) })
            .collect();
        let mut convs = Vec::new();
        for i in 0..5 {
            let stride = if i < 4 { 3 } else { 1 };
            convs.push(Conv2dKx1::new(
                format!("{prefix}.conv{i}"),
                ch[i],
                ch[i + 1],
                5,
                stride,
                2,
                NormKind::Weight,
                init,
            )?);
        }
        let post = Conv2dKx1::new(
            format!("{prefix}.post"),
            ch[5],
            1,
            3,
            1,
            1,
            NormKind::Weight,
            init,
        )?;
        Ok(Self {
            period,
            convs,
            post,
        })
    }

    pub fn forward(&self, audio: &Tensor<T>) -> Result<DiscriminatorOutput<T>> {
        let x = period_reshape(audio, self.period)?;
        run_stack(&x, &self.convs, &self.post, |l, x| l.forward(x))
    }

    pub fn zero(&self) {
        self.convs.iter().for_each(Conv2dKx1::zero);
        self.post.zero();
    }
}

impl<T: Float> Module<T> for PeriodDiscriminator<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        self.convs
            .iter()
            .chain([&self.post])
            .flat_map(|c| c.parameters())
            .collect()
    }
}

// (kernel, stride, groups, padding, channels out)
const MSD_LADDER: [(usize, usize, usize, usize, usize); 7] = [
    (15, 1, 1, 7, 128),
    (41, 2, 4, 20, 128),
    (41, 2, 16, 20, 256),
    (41, 4, 16, 20, 512),
    (41, 4, 16, 20, 1024),
    (41, 1, 16, 20, 1024),
    (5, 1, 1, 2, 1024),
];

/// Sub-discriminator over the raw or average-pooled waveform.
pub struct ScaleDiscriminator<T: Float> {
    pub convs: Vec<Conv1d<T>>,
    pub post: Conv1d<T>,
}

impl<T: Float> ScaleDiscriminator<T> {
    pub fn new(scale: usize, norm: NormKind, width_div: usize, init: &mut Init) -> Result<Self> {
        let prefix = format!("msd.s{scale}");
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &(k, stride, groups, padding, c_out)) in MSD_LADDER.iter().enumerate() {
            let c_out = c_out / width_div;
            let groups = groups.min(c_in).min(c_out);
            let p = ConvParams::default()
                .stride(stride)
                .padding(padding)
                .groups(groups);
            convs.push(Conv1d::new(
                format!("{prefix}.conv{i}"),
                c_in,
                c_out,
                k,
                p,
                norm,
                init,
            )?);
            c_in = c_out;
        }
        let post = Conv1d::new(
            format!("{prefix}.post"),
            c_in,
            1,
            3,
            ConvParams::default().padding(1),
            norm,
            init,
        )?;
        Ok(Self { convs, post })
    }

    pub fn forward(&self, audio: &Tensor<T>) -> Result<DiscriminatorOutput<T>> {
        run_stack(audio, &self.convs, &self.post, |l, x| l.forward(x))
    }

    pub fn set_training(&self, on: bool) {
        self.convs
            .iter()
            .chain([&self.post])
            .for_each(|c| c.kernel.set_training(on));
    }

    pub fn zero(&self) {
        self.convs.iter().for_each(Conv1d::zero);
        self.post.zero();
    }
}

impl<T: Float> Module<T> for ScaleDiscriminator<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        self.convs
            .iter()
            .chain([&self.post])
            .flat_map(|c| c.parameters())
            .collect()
    }

    fn buffers(&self) -> Vec<Parameter<T>> {
        self.convs
            .iter()
            .chain([&self.post])
            .flat_map(|c| c.buffers())
            .collect()
    }
}

/// ×2 average pooling between scales.
pub fn msd_pool<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    avg_pool1d(x, 4, 2, 2)
}

pub struct Mpd<T: Float> {
    pub subs: Vec<PeriodDiscriminator<T>>,
}

impl<T: Float> Mpd<T> {
    pub fn new(periods: &[usize], width_div: usize, init: &mut Init) -> Result<Self> {
        let subs = periods
            .iter()
            .map(|&p| PeriodDiscriminator::new(p, width_div, init))
            .collect::<Result<_>>()?;
        Ok(Self { subs })
    }

    pub fn forward(&self, audio: &Tensor<T>) -> Result<Vec<DiscriminatorOutput<T>>> {
        self.subs.iter().map(|d| d.forward(audio)).collect()
    }
}

impl<T: Float> Module<T> for Mpd<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        self.subs.iter().flat_map(|d| d.parameters()).collect()
    }
}

pub struct Msd<T: Float> {
    pub subs: Vec<ScaleDiscriminator<T>>,
}

impl<T: Float> Msd<T> {
    /// Spectral norm on the raw-scale discriminator, weight norm on the others.
    pub fn new(width_div: usize, init: &mut Init) -> Result<Self> {
        let subs = (0..3)
            .map(|s| {
                let norm = if s == 0 {
                    NormKind::Spectral
                } else {
                    NormKind::Weight
                };
                ScaleDiscriminator::new(s, norm, width_div, init)
            })
            .collect::<Result<_>>()?;
        Ok(Self { subs })
    }

    pub fn forward(&self, audio: &Tensor<T>) -> Result<Vec<DiscriminatorOutput<T>>> {
        let mut x = audio.clone();
        let mut out = Vec::with_capacity(self.subs.len());
        for (i, d) in self.subs.iter().enumerate() {
            if i > 0 {
                x = msd_pool(&x)?;
            }
            out.push(d.forward(&x)?);
        }
        Ok(out)
    }
}

impl<T: Float> Module<T> for Msd<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        self.subs.iter().flat_map(|d| d.parameters()).collect()
    }

    fn buffers(&self) -> Vec<Parameter<T>> {
        self.subs.iter().flat_map(|d| d.buffers()).collect()
    }
}

/// All sub-discriminators of a run: MPD outputs first, then MSD.
pub struct Discriminators<T: Float> {
    cfg: DiscriminatorConfig,
    pub mpd: Option<Mpd<T>>,
    pub msd: Option<Msd<T>>,
}

impl<T: Float> Discriminators<T> {
    pub fn new(cfg: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let mpd = cfg
            .use_mpd
            .then(|| Mpd::new(&cfg.periods, cfg.width_div, &mut init))
            .transpose()?;
        let msd = cfg
            .use_msd
            .then(|| Msd::new(cfg.width_div, &mut init))
            .transpose()?;
        Ok(Self {
            cfg: cfg.clone(),
            mpd,
            msd,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn forward(&self, audio: &Tensor<T>) -> Result<Vec<DiscriminatorOutput<T>>> {
        let mut out = Vec::with_capacity(self.cfg.count());
        if let Some(m) = &self.mpd {
            out.extend(m.forward(audio)?);
        }
        if let Some(m) = &self.msd {
            out.extend(m.forward(audio)?);
        }
        Ok(out)
    }

    /// Spectral-norm power iteration advances only while training, so a
    /// training-mode forward mutates state and must not run concurrently.
    pub fn set_training(&self, on: bool) {
        if let Some(m) = &self.msd {
            m.subs.iter().for_each(|d| d.set_training(on));
        }
    }
}

impl<T: Float> Module<T> for Discriminators<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = self
            .mpd
            .as_ref()
            .map(|m| m.parameters())
            .unwrap_or_default();
        out.extend(
            self.msd
                .as_ref()
                .map(|m| m.parameters())
                .unwrap_or_default(),
        );
        out
    }

    fn buffers(&self) -> Vec<Parameter<T>> {
        self.msd.as_ref().map(|m| m.buffers()).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> Tensor<f64> {
        Tensor::from_f64(&(1..=n).map(|v| v as f64).collect::<Vec<_>>(), &[1, 1, n]).unwrap()
    }

    #[test]
    fn reshape_examples() {
        let r = period_reshape(&seq(6), 3).unwrap();
        assert_eq!(r.shape(), &[1, 1, 2, 3]);
        assert_eq!(r.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = period_reshape(&seq(5), 2).unwrap();
        assert_eq!(r.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 4.0]);
        let r = period_reshape(&seq(4), 1).unwrap();
        assert_eq!(r.shape(), &[1, 1, 4, 1]);
    }

    #[test]
    fn zero_period_discriminator_scores_zero() {
        let d = PeriodDiscriminator::<f64>::new(3, 8, &mut Init::new(0)).unwrap();
        d.zero();
        let out = d.forward(&seq(100)).unwrap();
        assert_eq!(out.features.len(), 6);
        assert!(out.score_map.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn period_heights_shrink_by_three() {
        let d = PeriodDiscriminator::<f64>::new(2, 16, &mut Init::new(0)).unwrap();
        let out = d.forward(&seq(400)).unwrap();
        let heights: Vec<usize> = out.features.iter().map(|f| f.shape()[2]).collect();
        assert_eq!(heights, vec![67, 23, 8, 3, 3, 3]);
        assert!(out.features.iter().all(|f| f.shape()[3] == 2));
    }

    #[test]
    fn scale_discriminator_feature_count() {
        let d = ScaleDiscriminator::<f64>::new(1, NormKind::Weight, 16, &mut Init::new(0)).unwrap();
        let out = d.forward(&seq(256)).unwrap();
        assert_eq!(out.features.len(), 8);
        assert_eq!(out.score_map.shape(), &[1, 1, 4]);
    }

    #[test]
    fn config_counts_and_validation() {
        let c = DiscriminatorConfig::default();
        assert_eq!(c.count(), 8);
        assert_eq!(
            DiscriminatorConfig {
                use_mpd: false,
                ..c.clone()
            }
            .count(),
            3
        );
        assert!(DiscriminatorConfig {
            periods: vec![3, 2],
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(DiscriminatorConfig {
            use_mpd: false,
            use_msd: false,
            ..c
        }
        .validate()
        .is_err());
    }
}
