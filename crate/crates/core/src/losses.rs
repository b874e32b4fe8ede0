//! Least-squares adversarial terms, feature matching and the mel loss.

use crate::discriminators::DiscriminatorOutput;
use crate::error::{shape_err, Error, Result};
use crate::signal::MelExtractor;
use crate::tensor::{l1_distance, no_grad, Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub lambda_mel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_fm: 2.0,
            lambda_mel: 45.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_fm >= 0.0 && self.lambda_mel >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `mean((real - 1)^2) + mean(fake^2)` for one sub-discriminator.
pub fn adv_d_loss<T: Float>(real: &Tensor<T>, fake: &Tensor<T>) -> Tensor<T> {
    real.add_scalar(-1.0)
        .square()
        .mean()
        .add(&fake.square().mean())
        .expect("scalars")
}

/// `mean((fake - 1)^2)`.
pub fn adv_g_loss<T: Float>(fake: &Tensor<T>) -> Tensor<T> {
    fake.add_scalar(-1.0).square().mean()
}

/// Mean absolute difference per layer, summed over layers. Pairing is
/// positional; the real features are detached.
pub fn fm_loss<T: Float>(real: &[Tensor<T>], fake: &[Tensor<T>]) -> Result<Tensor<T>> {
    if real.len() != fake.len() {
        return shape_err(
            "fm_loss",
            format!("{} real layers vs {} fake", real.len(), fake.len()),
        );
    }
    let mut total = Tensor::scalar(0.0);
    for (r, f) in real.iter().zip(fake) {
        total = total.add(&l1_distance(&r.detach(), f)?)?;
    }
    Ok(total)
}

/// Mean L1 between the log-mel spectrograms of `x` and `x_hat`, with `x`
/// treated as a constant.
pub fn mel_loss<T: Float>(
    ex: &MelExtractor<T>,
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
) -> Result<Tensor<T>> {
    if x.shape() != x_hat.shape() {
        return shape_err(
            "mel_loss",
            format!("{:?} vs {:?}", x.shape(), x_hat.shape()),
        );
    }
    let target = no_grad(|| ex.forward(x))?;
    l1_distance(&target, &ex.forward(x_hat)?)
}

fn check_pairs<T: Float>(a: &[DiscriminatorOutput<T>], b: &[DiscriminatorOutput<T>]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return shape_err(
            "losses",
            format!("{} vs {} sub-discriminator outputs", a.len(), b.len()),
        );
    }
    Ok(())
}

/// Discriminator objective summed over sub-discriminators.
pub fn total_d_loss<T: Float>(
    real: &[DiscriminatorOutput<T>],
    fake: &[DiscriminatorOutput<T>],
) -> Result<Tensor<T>> {
    check_pairs(real, fake)?;
    let mut total = Tensor::scalar(0.0);
    for (r, f) in real.iter().zip(fake) {
        total = total.add(&adv_d_loss(&r.score_map, &f.score_map))?;
    }
    Ok(total)
}

/// The generator objective and its parts.
pub struct GeneratorLoss<T: Float> {
    pub total: Tensor<T>,
    pub adv: f64,
    pub fm: f64,
    pub mel: f64,
}

/// `sum_k [adv_g + λ_fm fm] + λ_mel mel`, where `mel` is an already computed
/// mel loss.
pub fn total_g_loss<T: Float>(
    fake: &[DiscriminatorOutput<T>],
    real: &[DiscriminatorOutput<T>],
    mel: &Tensor<T>,
    w: LossWeights,
) -> Result<GeneratorLoss<T>> {
    check_pairs(real, fake)?;
    let mut adv = Tensor::scalar(0.0);
    let mut fm = Tensor::scalar(0.0);
    for (f, r) in fake.iter().zip(real) {
        adv = adv.add(&adv_g_loss(&f.score_map))?;
        fm = fm.add(&fm_loss(&r.features, &f.features)?)?;
    }
    let total = adv
        .add(&fm.scale(w.lambda_fm))?
        .add(&mel.scale(w.lambda_mel))?;
    Ok(GeneratorLoss {
        adv: adv.item(),
        fm: fm.item(),
        mel: mel.item(),
        total,
    })
}
