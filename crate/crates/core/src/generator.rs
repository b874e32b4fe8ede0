//! Mel-to-waveform generator: transposed-convolution upsampling stages,
//! each followed by a multi-receptive-field fusion (MRF) block.

use crate::audio::AudioClip;
use crate::error::{shape_err, Error, Result};
use crate::nn::{Conv1d, ConvTranspose1d, Init, Module, NormKind, Parameter, LRELU_SLOPE};
use crate::signal::MelSpec;
use crate::tensor::{no_grad, ConvParams, Float, Tensor};

/// Samples produced per mel frame.
pub const HOP: usize = 256;

const PRE_POST_KERNEL: usize = 7;

/// Architecture hyper-parameters of a generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub name: String,
    /// Hidden width after the input convolution.
    pub h_u: usize,
    /// Transposed-convolution kernel sizes; stride is half the kernel.
    pub k_u: Vec<usize>,
    /// Residual block kernel sizes.
    pub k_r: Vec<usize>,
    /// Per residual block: units, each a list of dilations applied in turn.
    pub d_r: Vec<Vec<Vec<usize>>>,
    pub input_mels: usize,
}

fn v12_dilations() -> Vec<Vec<Vec<usize>>> {
    let unit = vec![vec![1, 1], vec![3, 1], vec![5, 1]];
    vec![unit.clone(), unit.clone(), unit]
}

impl GeneratorConfig {
    pub fn v1() -> Self {
        Self {
            name: "v1".into(),
            h_u: 512,
            k_u: vec![16, 16, 4, 4],
            k_r: vec![3, 7, 11],
            d_r: v12_dilations(),
            input_mels: 80,
        }
    }

    pub fn v2() -> Self {
        Self {
            name: "v2".into(),
            h_u: 128,
            ..Self::v1()
        }
    }

    pub fn v3() -> Self {
        Self {
            name: "v3".into(),
            h_u: 256,
            k_u: vec![16, 16, 8],
            k_r: vec![3, 5, 7],
            d_r: vec![
                vec![vec![1], vec![2]],
                vec![vec![2], vec![6]],
                vec![vec![3], vec![12]],
            ],
            input_mels: 80,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "v1" => Ok(Self::v1()),
            "v2" => Ok(Self::v2()),
            "v3" => Ok(Self::v3()),
            other => Err(Error::Config(format!(
                "unknown generator variant {other:?} (expected v1, v2 or v3)"
            ))),
        }
    }

    /// Keeps only the first residual block in every MRF.
    pub fn single_block(&self) -> Self {
        Self {
            name: format!("{}-single", self.name),
            k_r: self.k_r[..1].to_vec(),
            d_r: self.d_r[..1].to_vec(),
            ..self.clone()
        }
    }

    pub fn strides(&self) -> Vec<usize> {
        self.k_u.iter().map(|k| k / 2).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("generator {}: {m}", self.name)));
        if self.input_mels == 0 || self.h_u == 0 {
            return bad("input_mels and h_u must be positive".into());
        }
        if self.k_u.is_empty() {
            return bad("k_u must not be empty".into());
        }
        if let Some(k) = self.k_u.iter().find(|&&k| k < 2 || k % 2 != 0) {
            return bad(format!("upsampling kernel {k} must be even and >= 2"));
        }
        let product: usize = self.strides().iter().product();
        if product != HOP {
            return bad(format!("stride product {product} must equal {HOP}"));
        }
        if !self.h_u.is_multiple_of(1 << self.k_u.len()) {
            return bad(format!(
                "h_u {} cannot be halved {} times",
                self.h_u,
                self.k_u.len()
            ));
        }
        if self.k_r.is_empty() || self.k_r.len() != self.d_r.len() {
            return bad(format!(
                "k_r has {} entries but d_r has {}",
                self.k_r.len(),
                self.d_r.len()
            ));
        }
        if let Some(k) = self.k_r.iter().find(|&&k| k % 2 == 0) {
            return bad(format!("residual kernel {k} must be odd"));
        }
        for (n, units) in self.d_r.iter().enumerate() {
            if units.is_empty() || units.iter().any(|u| u.is_empty() || u.contains(&0)) {
                return bad(format!(
                    "d_r[{n}] needs non-empty units of positive dilations"
                ));
            }
        }
        Ok(())
    }
}

/// Receptive field, in samples, of a chain of same-padded convolutions with
/// kernel `k` and the given dilations.
pub fn unit_receptive_field(k: usize, dilations: &[usize]) -> usize {
    1 + dilations.iter().map(|d| d * (k - 1)).sum::<usize>()
}

/// Receptive field of the whole generator, measured in output samples.
///
/// Walks the stack from the output back to the input, tracking the spacing
/// (in output samples) between neighbouring positions of each layer's input.
pub fn receptive_field(cfg: &GeneratorConfig) -> usize {
    let mrf_span = |spacing: usize| {
        cfg.k_r
            .iter()
            .zip(&cfg.d_r)
            .map(|(&k, units)| {
                units
                    .iter()
                    .map(|u| unit_receptive_field(k, u) - 1)
                    .sum::<usize>()
            })
            .max()
            .unwrap_or(0)
            * spacing
    };
    let mut spacing = 1;
    let mut rf = 1 + (PRE_POST_KERNEL - 1);
    for (&k, &s) in cfg.k_u.iter().zip(cfg.strides().iter()).rev() {
        rf += mrf_span(spacing);
        spacing *= s;
        // each output position of a transposed conv sees ceil(k/s) inputs
        rf += (k.div_ceil(s) - 1) * spacing;
    }
    rf + (PRE_POST_KERNEL - 1) * spacing
}

/// Stack of residual units; each unit is a chain of leaky ReLU + dilated
/// convolution wrapped by a skip connection.
pub struct ResBlock<T: Float> {
    pub units: Vec<Vec<Conv1d<T>>>,
}

impl<T: Float> ResBlock<T> {
    pub fn new(
        prefix: &str,
        channels: usize,
        k: usize,
        units: &[Vec<usize>],
        init: &mut Init,
    ) -> Result<Self> {
        let mut idx = 0;
        let mut built = Vec::with_capacity(units.len());
        for unit in units {
            let mut convs = Vec::with_capacity(unit.len());
            for &d in unit {
                let p = ConvParams::default().dilation(d).padding(d * (k - 1) / 2);
                convs.push(Conv1d::new(
                    format!("{prefix}.conv{idx}"),
                    channels,
                    channels,
                    k,
                    p,
                    NormKind::Weight,
                    init,
                )?);
                idx += 1;
            }
            built.push(convs);
        }
        Ok(Self { units: built })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = x.clone();
        for unit in &self.units {
            let mut h = x.clone();
            for conv in unit {
                h = conv.forward(&h.leaky_relu(LRELU_SLOPE))?;
            }
            x = h.add(&x)?;
        }
        Ok(x)
    }

    /// Zeroes every convolution, leaving the identity map.
    pub fn zero(&self) {
        self.units.iter().flatten().for_each(Conv1d::zero);
    }
}

impl<T: Float> Module<T> for ResBlock<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        self.units
            .iter()
            .flatten()
            .flat_map(|c| c.parameters())
            .collect()
    }
}

/// Multi-receptive-field fusion: the mean of several residual blocks.
pub struct Mrf<T: Float> {
    pub blocks: Vec<ResBlock<T>>,
}

impl<T: Float> Mrf<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut acc: Option<Tensor<T>> = None;
        for b in &self.blocks {
            let y = b.forward(x)?;
            acc = Some(match acc {
                None => y,
                Some(a) => a.add(&y)?,
            });
        }
        Ok(acc
            .expect("MRF has at least one block")
            .scale(1.0 / self.blocks.len() as f64))
    }
}

impl<T: Float> Module<T> for Mrf<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        self.blocks.iter().flat_map(|b| b.parameters()).collect()
    }
}

pub struct Generator<T: Float> {
    cfg: GeneratorConfig,
    pub conv_pre: Conv1d<T>,
    pub ups: Vec<ConvTranspose1d<T>>,
    pub mrfs: Vec<Mrf<T>>,
    pub conv_post: Conv1d<T>,
}

impl<T: Float> Generator<T> {
    pub fn new(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let same = ConvParams::default().padding(PRE_POST_KERNEL / 2);
        let conv_pre = Conv1d::new(
            "gen.conv_pre",
            cfg.input_mels,
            cfg.h_u,
            PRE_POST_KERNEL,
            same,
            NormKind::Weight,
            &mut init,
        )?;
        let mut ups = Vec::new();
        let mut mrfs = Vec::new();
        let mut ch = cfg.h_u;
        for (i, &k) in cfg.k_u.iter().enumerate() {
            let s = k / 2;
            ups.push(ConvTranspose1d::new(
                format!("gen.ups{i}"),
                ch,
                ch / 2,
                k,
                s,
                (k - s) / 2,
                NormKind::Weight,
                &mut init,
            )?);
            ch /= 2;
            let blocks = cfg
                .k_r
                .iter()
                .zip(&cfg.d_r)
                .enumerate()
                .map(|(j, (&kr, units))| {
                    ResBlock::new(&format!("gen.mrf{i}.res{j}"), ch, kr, units, &mut init)
                })
                .collect::<Result<Vec<_>>>()?;
            mrfs.push(Mrf { blocks });
        }
        let conv_post = Conv1d::new(
            "gen.conv_post",
            ch,
            1,
            PRE_POST_KERNEL,
            same,
            NormKind::Weight,
            &mut init,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            conv_pre,
            ups,
            mrfs,
            conv_post,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// `[B, n_mels, N]` log-mel to `[B, 1, 256 N]` waveform in (-1, 1).
    pub fn forward(&self, mel: &Tensor<T>) -> Result<Tensor<T>> {
        let s = mel.shape();
        if s.len() != 3 || s[1] != self.cfg.input_mels {
            return shape_err(
                "generator",
                format!("expected [B, {}, frames], got {s:?}", self.cfg.input_mels),
            );
        }
        let mut x = self.conv_pre.forward(mel)?;
        for (up, mrf) in self.ups.iter().zip(&self.mrfs) {
            x = up.forward(&x.leaky_relu(LRELU_SLOPE))?;
            x = mrf.forward(&x)?;
        }
        Ok(self.conv_post.forward(&x.leaky_relu(LRELU_SLOPE))?.tanh())
    }

    /// Inference on one spectrogram without recording a graph.
    pub fn synthesize(&self, mel: &MelSpec) -> Result<AudioClip> {
        let y = no_grad(|| self.forward(&mel.to_tensor()?))?;
        let samples = y.data().iter().map(|v| v.as_f64() as f32).collect();
        AudioClip::new(mel.sample_rate, samples)
    }

    /// Zeroes every kernel and bias (the output becomes `tanh(0)`).
    pub fn zero(&self) {
        self.conv_pre.zero();
        self.ups.iter().for_each(ConvTranspose1d::zero);
        self.mrfs
            .iter()
            .flat_map(|m| &m.blocks)
            .for_each(ResBlock::zero);
        self.conv_post.zero();
    }

    /// Parameter counts for the input conv, each stage and the output conv.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut out = vec![("conv_pre".to_string(), self.conv_pre.param_count())];
        for (i, (u, m)) in self.ups.iter().zip(&self.mrfs).enumerate() {
            out.push((format!("ups{i}"), u.param_count()));
            out.push((format!("mrf{i}"), m.param_count()));
        }
        out.push(("conv_post".into(), self.conv_post.param_count()));
        out
    }
}

impl<T: Float> Module<T> for Generator<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = self.conv_pre.parameters();
        for (u, m) in self.ups.iter().zip(&self.mrfs) {
            out.extend(u.parameters());
            out.extend(m.parameters());
        }
        out.extend(self.conv_post.parameters());
        out
    }
}
