//! GAN vocoder with multi-period and multi-scale discriminators, built on a small reverse-mode autodiff engine.

pub mod audio;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod discriminators;
pub mod error;
pub mod experiments;
pub mod generator;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod signal;
pub mod tensor;
pub mod trainer;

pub use audio::AudioClip;
pub use error::{Error, Result};
pub use signal::{MelConfig, MelSpec};
pub use tensor::{Float, Tensor};
