//! Synthesis throughput: warm-up runs, then timed 32-bit forward passes.
//! Mel input construction happens outside the timed region.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::generator::{Generator, HOP};
use crate::nn::Init;
use crate::tensor::{no_grad, Tensor};

/// Coefficient of variation above which a report is marked unstable.
pub const MAX_STABLE_CV: f64 = 0.10;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub seconds_of_audio: f64,
    pub sample_rate: u32,
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seconds_of_audio: 2.0,
            sample_rate: 22050,
            warmup: 1,
            repeats: 5,
        }
    }
}

impl BenchConfig {
    /// Mel frames covering at least `seconds_of_audio`.
    pub fn frames(&self) -> usize {
        ((self.seconds_of_audio * self.sample_rate as f64) / HOP as f64)
            .ceil()
            .max(1.0) as usize
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub model: String,
    pub frames: usize,
    pub samples: usize,
    pub threads: String,
    pub sample_rate: u32,
    pub warmup: usize,
    /// Wall-clock seconds of each timed repeat.
    pub times: Vec<f64>,
}

impl BenchReport {
    pub fn mean_seconds(&self) -> f64 {
        self.times.iter().sum::<f64>() / self.times.len() as f64
    }

    /// Thousands of samples generated per wall-clock second.
    pub fn khz(&self) -> f64 {
        self.samples as f64 / self.mean_seconds() / 1000.0
    }

    /// Multiple of real time at the model's sample rate.
    pub fn real_time_factor(&self) -> f64 {
        self.khz() * 1000.0 / self.sample_rate as f64
    }

    /// Sample standard deviation of the repeat times over their mean.
    pub fn cv(&self) -> f64 {
        let n = self.times.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean_seconds();
        let var = self.times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / mean
    }

    pub fn unstable(&self) -> bool {
        self.cv() > MAX_STABLE_CV
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "method: {} warm-up + {} timed forward passes, f32, single process, gemm threads {}, mel input and I/O excluded",
            self.warmup,
            self.times.len(),
            self.threads
        )?;
        writeln!(
            f,
            "model: {} frames: {} samples: {}",
            self.model, self.frames, self.samples
        )?;
        let times: Vec<String> = self.times.iter().map(|t| format!("{:.4}", t)).collect();
        writeln!(f, "times_s: {}", times.join(" "))?;
        write!(
            f,
            "speed: {:.2} kHz  real-time: x{:.2}  cv: {:.1}%{}",
            self.khz(),
            self.real_time_factor(),
            self.cv() * 100.0,
            if self.unstable() {
                "  UNSTABLE (cv above 10%)"
            } else {
                ""
            }
        )
    }
}

/// Times `gen` on a fixed pseudo-random mel input.
pub fn bench_generator(
    gen: &Generator<f32>,
    cfg: &BenchConfig,
    threads: &str,
) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(Error::Config(
            "bench needs at least one timed repeat".into(),
        ));
    }
    let frames = cfg.frames();
    let mels = gen.config().input_mels;
    let values: Vec<f32> = Init::with_std(0, 1.0)
        .normal::<f32>(mels * frames)
        .iter()
        .map(|v| v - 5.0)
        .collect();
    let mel = Tensor::new(values, &[1, mels, frames])?;
    let run = || no_grad(|| gen.forward(&mel));
    for _ in 0..cfg.warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(cfg.repeats);
    let mut samples = 0;
    for _ in 0..cfg.repeats {
        let start = Instant::now();
        let y = run()?;
        times.push(start.elapsed().as_secs_f64());
        samples = y.numel();
    }
    Ok(BenchReport {
        model: gen.config().name.clone(),
        frames,
        samples,
        threads: threads.to_string(),
        sample_rate: cfg.sample_rate,
        warmup: cfg.warmup,
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(times: Vec<f64>) -> BenchReport {
        BenchReport {
            model: "m".into(),
            frames: 1,
            samples: 22050,
            threads: "1".into(),
            sample_rate: 22050,
            warmup: 0,
            times,
        }
    }

    #[test]
    fn unit_laws() {
        let r = report(vec![1.0, 1.0]);
        assert_eq!(r.khz(), 22.05);
        assert_eq!(r.real_time_factor(), 1.0);
        assert_eq!(r.cv(), 0.0);
        assert!(!r.unstable());
        assert!(report(vec![1.0, 2.0]).unstable());
        assert!(report(vec![1.0, 2.0]).to_string().contains("UNSTABLE"));
    }

    #[test]
    fn frames_cover_the_request() {
        let c = BenchConfig {
            seconds_of_audio: 1.0,
            ..Default::default()
        };
        assert_eq!(c.frames(), 87);
    }
}
