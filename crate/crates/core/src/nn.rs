//! Parameterized layers shared by the generator and discriminators.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{
    conv1d, conv2d_kx1, conv_transpose1d, spectral_norm_apply, weight_norm_reparam, ConvParams,
    Float, Tensor,
};

/// Leaky ReLU slope used throughout the models.
pub const LRELU_SLOPE: f64 = 0.1;

/// Standard deviation of the weight initializer.
pub const INIT_STD: f64 = 0.01;

/// A named trainable tensor. Names are unique within a model and fix the
/// checkpoint order.
#[derive(Clone, Debug)]
pub struct Parameter<T: Float> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T: Float> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

pub trait Module<T: Float> {
    fn parameters(&self) -> Vec<Parameter<T>>;

    /// Non-trainable state that still belongs in a checkpoint.
    fn buffers(&self) -> Vec<Parameter<T>> {
        Vec::new()
    }

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.tensor.numel()).sum()
    }

    fn zero_grad(&self) {
        for p in self.parameters() {
            p.tensor.zero_grad();
        }
    }

    /// Freezes (or unfreezes) every parameter.
    fn set_requires_grad(&self, on: bool) {
        for p in self.parameters() {
            p.tensor.set_requires_grad(on);
        }
    }
}

/// Seeded weight initializer: `Normal(0, INIT_STD)` weights, zero biases.
pub struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self::with_std(seed, INIT_STD)
    }

    pub fn with_std(seed: u64, std: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("init std must be positive"),
        }
    }

    pub fn normal<T: Float>(&mut self, n: usize) -> Vec<T> {
        (0..n)
            .map(|_| T::of(self.normal.sample(&mut self.rng)))
            .collect()
    }

    fn unit<T: Float>(&mut self, n: usize) -> Vec<T> {
        let std = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..n).map(|_| std.sample(&mut self.rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| T::of(x / norm)).collect()
    }
}

/// How a layer's kernel is parameterized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Plain,
    Weight,
    Spectral,
}

/// Kernel storage for one layer.
pub enum Kernel<T: Float> {
    Plain(Tensor<T>),
    /// `w = g · v / ‖v‖` per leading-axis slice.
    Weight {
        v: Tensor<T>,
        g: Tensor<T>,
    },
    /// `w = W / σ̂(W)` with a persistent power-iteration vector.
    Spectral {
        weight: Tensor<T>,
        u: Mutex<Tensor<T>>,
        training: AtomicBool,
    },
}

impl<T: Float> Kernel<T> {
    pub fn init(kind: NormKind, shape: &[usize], init: &mut Init) -> Result<Self> {
        let n: usize = shape.iter().product();
        let w = init.normal::<T>(n);
        Ok(match kind {
            NormKind::Plain => Kernel::Plain(Tensor::param(w, shape)?),
            NormKind::Weight => {
                let rows = shape[0];
                let cols = n / rows;
                let g: Vec<T> = w
                    .chunks(cols)
                    .map(|r| r.iter().map(|&x| x * x).sum::<T>().sqrt())
                    .collect();
                Kernel::Weight {
                    v: Tensor::param(w, shape)?,
                    g: Tensor::param(g, &[rows])?,
                }
            }
            NormKind::Spectral => Kernel::Spectral {
                weight: Tensor::param(w, shape)?,
                u: Mutex::new(Tensor::new(init.unit(shape[0]), &[shape[0]])?),
                training: AtomicBool::new(true),
            },
        })
    }

    pub fn kind(&self) -> NormKind {
        match self {
            Kernel::Plain(_) => NormKind::Plain,
            Kernel::Weight { .. } => NormKind::Weight,
            Kernel::Spectral { .. } => NormKind::Spectral,
        }
    }

    /// The kernel actually applied to the input. For spectral norm in
    /// training mode this advances the power iteration by one step.
    pub fn effective(&self) -> Result<Tensor<T>> {
        match self {
            Kernel::Plain(w) => Ok(w.clone()),
            Kernel::Weight { v, g } => weight_norm_reparam(v, g),
            Kernel::Spectral {
                weight,
                u,
                training,
            } => {
                let iters = usize::from(training.load(Ordering::Relaxed));
                let mut u = u.lock().expect("spectral norm state poisoned");
                let (w, u_next) = spectral_norm_apply(weight, &u, iters)?;
                if iters > 0 {
                    *u = u_next;
                }
                Ok(w)
            }
        }
    }

    pub fn set_training(&self, on: bool) {
        if let Kernel::Spectral { training, .. } = self {
            training.store(on, Ordering::Relaxed);
        }
    }

    fn params(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        match self {
            Kernel::Plain(w) => out.push(Parameter::new(format!("{prefix}.weight"), w.clone())),
            Kernel::Weight { v, g } => {
                out.push(Parameter::new(format!("{prefix}.v"), v.clone()));
                out.push(Parameter::new(format!("{prefix}.g"), g.clone()));
            }
            Kernel::Spectral { weight, .. } => {
                out.push(Parameter::new(format!("{prefix}.weight"), weight.clone()))
            }
        }
    }

    fn buffers(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        if let Kernel::Spectral { u, .. } = self {
            out.push(Parameter::new(
                format!("{prefix}.u"),
                u.lock().expect("spectral norm state poisoned").clone(),
            ));
        }
    }

    /// Sets the applied kernel to zero (`g = 0` under weight norm).
    pub fn zero(&self) {
        match self {
            Kernel::Plain(w) | Kernel::Spectral { weight: w, .. } => w.data_mut().fill(T::zero()),
            Kernel::Weight { g, .. } => g.data_mut().fill(T::zero()),
        }
    }
}

fn bias_param<T: Float>(c_out: usize, with_bias: bool) -> Result<Option<Tensor<T>>> {
    with_bias
        .then(|| Tensor::param(vec![T::zero(); c_out], &[c_out]))
        .transpose()
}

/// 1-D convolution layer, `[B, C_in, L] -> [B, C_out, L']`.
pub struct Conv1d<T: Float> {
    pub name: String,
    pub kernel: Kernel<T>,
    pub bias: Option<Tensor<T>>,
    pub params: ConvParams,
}

impl<T: Float> Conv1d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        params: ConvParams,
        norm: NormKind,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            kernel: Kernel::init(norm, &[c_out, c_in / params.groups, k], init)?,
            bias: bias_param(c_out, true)?,
            params,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv1d(
            x,
            &self.kernel.effective()?,
            self.bias.as_ref(),
            self.params,
        )
    }
}

/// Transposed 1-D convolution layer (weight `[C_in, C_out, K]`).
pub struct ConvTranspose1d<T: Float> {
    pub name: String,
    pub kernel: Kernel<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Float> ConvTranspose1d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        norm: NormKind,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            kernel: Kernel::init(norm, &[c_in, c_out, k], init)?,
            bias: bias_param(c_out, true)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv_transpose1d(
            x,
            &self.kernel.effective()?,
            self.bias.as_ref(),
            self.stride,
            self.padding,
        )
    }
}

/// `K×1` 2-D convolution layer used by the period discriminators.
pub struct Conv2dKx1<T: Float> {
    pub name: String,
    pub kernel: Kernel<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Float> Conv2dKx1<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        norm: NormKind,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            kernel: Kernel::init(norm, &[c_out, c_in, k, 1], init)?,
            bias: bias_param(c_out, true)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_kx1(
            x,
            &self.kernel.effective()?,
            self.bias.as_ref(),
            self.stride,
            self.padding,
        )
    }
}

/// Dense layer `[B, in] -> [B, out]`.
pub struct Linear<T: Float> {
    pub name: String,
    pub kernel: Kernel<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Float> Linear<T> {
    pub fn new(
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        norm: NormKind,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            kernel: Kernel::init(norm, &[fan_out, fan_in], init)?,
            bias: bias_param(fan_out, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(&self.kernel.effective()?, self.bias.as_ref())
    }
}

macro_rules! impl_layer_module {
    ($($ty:ident),*) => {$(
        impl<T: Float> Module<T> for $ty<T> {
            fn parameters(&self) -> Vec<Parameter<T>> {
                let mut out = Vec::new();
                self.kernel.params(&self.name, &mut out);
                if let Some(b) = &self.bias {
                    out.push(Parameter::new(format!("{}.bias", self.name), b.clone()));
                }
                out
            }

            fn buffers(&self) -> Vec<Parameter<T>> {
                let mut out = Vec::new();
                self.kernel.buffers(&self.name, &mut out);
                out
            }
        }

        impl<T: Float> $ty<T> {
            /// Zeroes the applied kernel and the bias.
            pub fn zero(&self) {
                self.kernel.zero();
                if let Some(b) = &self.bias {
                    b.data_mut().fill(T::zero());
                }
            }
        }
    )*};
}

impl_layer_module!(Conv1d, ConvTranspose1d, Conv2dKx1, Linear);
