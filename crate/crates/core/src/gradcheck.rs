//! Central finite-difference gradient checker (64-bit).
//!
//! Only forward values are used, so the check stays independent of every
//! backward implementation it validates.

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Entries compared.
    pub checked: usize,
    /// Entries outside tolerance.
    pub failures: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over
    /// entries above the absolute floor.
    pub max_rel_err: f64,
    /// `(input index, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    pub rtol: f64,
    /// Differences below this are accepted regardless of `rtol`.
    pub atol: f64,
    /// Upper bound on elements probed per input (evenly strided).
    pub max_per_input: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            rtol: 1e-4,
            atol: 1e-8,
            max_per_input: usize::MAX,
        }
    }
}

impl GradCheck {
    /// Compares the gradient of the scalar `f()` with respect to each of
    /// `inputs` against central differences.
    pub fn run(
        &self,
        inputs: &[Tensor<f64>],
        f: impl Fn() -> Result<Tensor<f64>>,
    ) -> Result<GradCheckReport> {
        for x in inputs {
            x.zero_grad();
        }
        f()?.backward()?;
        let analytic: Vec<Vec<f64>> = inputs
            .iter()
            .map(|x| x.grad().unwrap_or_else(|| vec![0.0; x.numel()]))
            .collect();
        let mut report = GradCheckReport {
            checked: 0,
            failures: 0,
            max_rel_err: 0.0,
            worst: None,
        };
        no_grad(|| -> Result<()> {
            for (xi, x) in inputs.iter().enumerate() {
                let n = x.numel();
                let step = n.div_ceil(self.max_per_input.min(n)).max(1);
                for e in (0..n).step_by(step) {
                    let orig = x.data()[e];
                    x.data_mut()[e] = orig + self.eps;
                    let up = f()?.item();
                    x.data_mut()[e] = orig - self.eps;
                    let down = f()?.item();
                    x.data_mut()[e] = orig;
                    let numeric = (up - down) / (2.0 * self.eps);
                    let a = analytic[xi][e];
                    let diff = (a - numeric).abs();
                    let scale = a.abs().max(numeric.abs());
                    report.checked += 1;
                    if diff > self.atol {
                        let rel = diff / scale;
                        if rel > report.max_rel_err {
                            report.max_rel_err = rel;
                            report.worst = Some((xi, e, a, numeric));
                        }
                        if rel > self.rtol {
                            report.failures += 1;
                        }
                    }
                }
            }
            Ok(())
        })?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // abs() has a correct gradient; check it passes, then check a
        // function whose value changes but reports no gradient at all.
        let x = Tensor::param(vec![0.3, -0.8], &[2]).unwrap();
        let ok = GradCheck::default()
            .run(std::slice::from_ref(&x), || Ok(x.abs().sum()))
            .unwrap();
        assert!(ok.passed());
        let c = x.detach();
        let bad = GradCheck::default()
            .run(std::slice::from_ref(&x), || {
                let live = x.data().clone();
                c.data_mut().copy_from_slice(&live);
                c.square().sum().add(&x.scale(0.0).sum())
            })
            .unwrap();
        assert!(!bad.passed());
    }
}
