use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use log::info;

use ganvoc::audio::{wav_read, wav_write};
use ganvoc::bench::{bench_generator, BenchConfig};
use ganvoc::checkpoint::Checkpoint;
use ganvoc::config::RunConfig;
use ganvoc::discriminators::Discriminators;
use ganvoc::experiments::periodic::{
    format_table, run_tones, ClassifierConfig, ToneConfig, DEFAULT_RATIOS,
};
use ganvoc::experiments::sinc::{pooled_high_band_retention, run_sinc, SincConfig, SincTarget};
use ganvoc::experiments::{write_columns, DiscKind};
use ganvoc::generator::{Generator, GeneratorConfig};
use ganvoc::nn::Module;
use ganvoc::signal::{mel_spectrogram, read_mel};
use ganvoc::trainer::{load_generator, Batcher, Trainer};
use ganvoc::AudioClip;

use crate::ConfigArg;

fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    let mut cfg = match &arg.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &arg.variant {
        cfg.generator = GeneratorConfig::preset(v)?;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_clips(dir: &Path, sample_rate: u32) -> Result<Vec<AudioClip>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no .wav files in {}", dir.display());
    paths
        .iter()
        .map(|p| {
            let clip = wav_read(p).with_context(|| p.display().to_string())?;
            ensure!(
                clip.sample_rate == sample_rate,
                "{}: sample rate {} differs from mel.sample_rate {}",
                p.display(),
                clip.sample_rate,
                sample_rate
            );
            Ok(clip)
        })
        .collect()
}

pub fn train(
    arg: &ConfigArg,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    steps: Option<u64>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(arg)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    let clips = read_clips(data, cfg.mel.sample_rate)?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    let mut trainer =
        Trainer::<f32>::new(&cfg.generator, &cfg.disc, &cfg.mel, &cfg.train, cfg.loss)?;
    if cfg.train.steps_per_epoch == 0 {
        trainer.set_steps_per_epoch(clips.len().div_ceil(cfg.train.batch_size) as u64);
    }
    if let Some(c) = &resume {
        trainer.restore(c)?;
    }
    ensure_dir(out)?;
    cfg.save(out.join("config.txt"))?;
    info!(
        "training {} on {} clips from step {}",
        cfg.generator.name,
        clips.len(),
        trainer.step()
    );
    let mut batcher = Batcher::new(
        cfg.train.seed.wrapping_add(2).wrapping_add(trainer.step()),
        cfg.train.segment_length,
        &cfg.mel,
    );
    while trainer.step() < cfg.train.steps {
        let (audio, mel) = batcher.next::<f32>(&clips, cfg.train.batch_size)?;
        let m = trainer.train_step(&audio, &mel)?;
        println!("{m}");
        let done = trainer.step();
        if cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 {
            trainer.save(out.join(format!("ckpt_{done:08}.hfgc")))?;
        }
    }
    trainer.save(out.join("last.hfgc"))?;
    Ok(())
}

pub fn synth(arg: &ConfigArg, checkpoint: &Path, input: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(arg)?;
    let is_wav = input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    let mel = if is_wav {
        let clip = wav_read(input).with_context(|| input.display().to_string())?;
        ensure!(
            clip.sample_rate == cfg.mel.sample_rate,
            "input sample rate {} differs from mel.sample_rate {}",
            clip.sample_rate,
            cfg.mel.sample_rate
        );
        mel_spectrogram(&clip, &cfg.mel)?
    } else {
        read_mel(input).with_context(|| input.display().to_string())?
    };
    ensure!(
        mel.n_mels == cfg.generator.input_mels,
        "mel has {} bands, generator expects {}",
        mel.n_mels,
        cfg.generator.input_mels
    );
    ensure!(
        checkpoint.is_file(),
        "checkpoint {} not found",
        checkpoint.display()
    );
    let gen = load_generator::<f32>(&cfg.effective_generator(), checkpoint)?;
    let clip = gen.synthesize(&mel)?;
    wav_write(out, &clip)?;
    println!(
        "wrote {} samples ({} frames) to {}",
        clip.len(),
        mel.frames,
        out.display()
    );
    Ok(())
}

pub fn bench(
    arg: &ConfigArg,
    checkpoint: Option<&Path>,
    seconds: f64,
    repeats: usize,
    threads: usize,
) -> Result<()> {
    let cfg = load_config(arg)?;
    ensure!(seconds > 0.0, "--seconds must be positive");
    let gen_cfg = cfg.effective_generator();
    let gen = match checkpoint {
        Some(p) => load_generator::<f32>(&gen_cfg, p)?,
        None => Generator::<f32>::new(&gen_cfg, 0)?,
    };
    let bc = BenchConfig {
        seconds_of_audio: seconds,
        sample_rate: cfg.mel.sample_rate,
        repeats,
        ..Default::default()
    };
    println!("{}", bench_generator(&gen, &bc, &threads.to_string())?);
    Ok(())
}

pub fn params(arg: &ConfigArg) -> Result<()> {
    let cfg = load_config(arg)?;
    let gen = Generator::<f32>::new(&cfg.effective_generator(), 0)?;
    println!("generator {}", gen.config().name);
    for (name, n) in gen.param_breakdown() {
        println!("  {name:<10} {n:>12}");
    }
    let total = gen.param_count();
    println!(
        "  {:<10} {:>12}  ({:.2}M)",
        "total",
        total,
        total as f64 / 1e6
    );
    let disc = Discriminators::<f32>::new(&cfg.disc, 0)?;
    if let Some(m) = &disc.mpd {
        println!("mpd        {:>12}", m.param_count());
    }
    if let Some(m) = &disc.msd {
        println!("msd        {:>12}", m.param_count());
    }
    Ok(())
}

pub fn exp_b1(
    ratios: &[f64],
    repeats: Option<usize>,
    seed: u64,
    fast: bool,
    out: Option<&Path>,
) -> Result<()> {
    let ratios = if ratios.is_empty() {
        DEFAULT_RATIOS.to_vec()
    } else {
        ratios.to_vec()
    };
    let train = if fast {
        ClassifierConfig::fast()
    } else {
        ClassifierConfig::full()
    };
    let repeats = repeats.unwrap_or(if fast { 1 } else { 5 });
    ensure!(repeats > 0, "--repeats must be positive");
    for &r in &ratios {
        let data = if fast {
            ToneConfig::fast(r)
        } else {
            ToneConfig::full(r)
        };
        data.validate()?;
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let mut rows = Vec::new();
    let mut records = String::new();
    for &r in &ratios {
        let data = if fast {
            ToneConfig::fast(r)
        } else {
            ToneConfig::full(r)
        };
        rows.push(run_tones(&data, &train, repeats, seed, |run| {
            let line = run.record(&data, &train);
            println!("{line}");
            records.push_str(&line);
            records.push('\n');
        })?);
    }
    let table = format_table(&rows);
    print!("{table}");
    if let Some(dir) = out {
        ganvoc::audio::write_atomic(dir.join("table.txt"), table.as_bytes())?;
        ganvoc::audio::write_atomic(dir.join("runs.txt"), records.as_bytes())?;
    }
    Ok(())
}

pub fn exp_b2(
    kind: &str,
    seed: u64,
    seeds: u64,
    steps: Option<usize>,
    fast: bool,
    out: Option<&Path>,
) -> Result<()> {
    let kinds: Vec<DiscKind> = match kind {
        "both" => DiscKind::BOTH.to_vec(),
        k => vec![k.parse()?],
    };
    ensure!(seeds > 0, "--seeds must be positive");
    let cfg = SincConfig {
        steps: steps.unwrap_or(if fast { 2000 } else { 10_000 }),
        ..Default::default()
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let target = SincTarget::new();
    println!(
        "pooled x4 high-band retention: {:.4}",
        pooled_high_band_retention(&target)?
    );
    for &k in &kinds {
        let mut errors = Vec::new();
        for s in seed..seed + seeds {
            let run = run_sinc(k, s, &cfg)?;
            println!("{}", run.record(&cfg));
            errors.push(run.rel_l2);
            if let Some(dir) = out {
                let stem = format!("{}_seed{s}", k.to_string().to_lowercase());
                write_columns(
                    dir.join(format!("{stem}_signal.txt")),
                    &["x", "target", "learned"],
                    &[&target.domain, &target.values, &run.learned],
                )?;
                for v in &run.views {
                    let idx: Vec<f64> = (0..v.target.len()).map(|i| i as f64).collect();
                    write_columns(
                        dir.join(format!("{stem}_{}.txt", v.label)),
                        &["n", "target", "learned"],
                        &[&idx, &v.target, &v.learned],
                    )?;
                    let bins: Vec<f64> = (0..v.target_response.len()).map(|i| i as f64).collect();
                    write_columns(
                        dir.join(format!("{stem}_{}_spectrum.txt", v.label)),
                        &["bin", "target_mag", "learned_mag"],
                        &[&bins, &v.target_response, &v.learned_response],
                    )?;
                }
            }
        }
        println!(
            "{k} mean relative L2 error over {} seeds: {:.6}",
            errors.len(),
            errors.iter().sum::<f64>() / errors.len() as f64
        );
    }
    Ok(())
}

pub fn melcmp(arg: &ConfigArg, wav: &Path, mel_path: &Path) -> Result<()> {
    let cfg = load_config(arg)?;
    let clip = wav_read(wav).with_context(|| wav.display().to_string())?;
    let mel = read_mel(mel_path).with_context(|| mel_path.display().to_string())?;
    if clip.sample_rate != cfg.mel.sample_rate {
        bail!(
            "wav sample rate {} differs from mel.sample_rate {}",
            clip.sample_rate,
            cfg.mel.sample_rate
        );
    }
    let ours = mel_spectrogram(&clip, &cfg.mel)?;
    println!("{:.9}", ours.mean_abs_diff(&mel)?);
    Ok(())
}
