//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! generator.variant = v3
//! train.batch_size = 4
//! disc.periods = 2,3,5,7,11
//! ```
//!
//! `generator.variant` selects a preset (`v1`, `v2`, `v3`) that later
//! `generator.*` keys override, or `custom`, which requires every generator
//! field. Residual dilations are written per block separated by `;`, units
//! within a block by `|` and dilations within a unit by `,`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::audio::write_atomic;
use crate::discriminators::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::losses::LossWeights;
use crate::signal::MelConfig;
use crate::trainer::TrainConfig;

const GENERATOR_FIELDS: [&str; 5] = [
    "generator.h_u",
    "generator.k_u",
    "generator.k_r",
    "generator.d_r",
    "generator.input_mels",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub mel: MelConfig,
    pub train: TrainConfig,
    pub disc: DiscriminatorConfig,
    pub loss: LossWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::v1(),
            mel: MelConfig::default(),
            train: TrainConfig::default(),
            disc: DiscriminatorConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| format!("bad list element {:?}", p.trim()))
        })
        .collect()
}

fn dilations_to_string(d: &[Vec<Vec<usize>>]) -> String {
    d.iter()
        .map(|block| block.iter().map(|u| list(u)).collect::<Vec<_>>().join("|"))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_dilations(s: &str) -> Result<Vec<Vec<Vec<usize>>>, String> {
    s.split(';')
        .map(|block| block.split('|').map(parse_list).collect())
        .collect()
}

fn parse<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse {s:?}"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

impl RunConfig {
    /// Every key in serialization order with its current value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (g, m, t, d, l) = (
            &self.generator,
            &self.mel,
            &self.train,
            &self.disc,
            &self.loss,
        );
        vec![
            ("generator.variant", g.name.clone()),
            ("generator.h_u", g.h_u.to_string()),
            ("generator.k_u", list(&g.k_u)),
            ("generator.k_r", list(&g.k_r)),
            ("generator.d_r", dilations_to_string(&g.d_r)),
            ("generator.input_mels", g.input_mels.to_string()),
            ("mel.sample_rate", m.sample_rate.to_string()),
            ("mel.n_fft", m.n_fft.to_string()),
            ("mel.win_size", m.win_size.to_string()),
            ("mel.hop", m.hop.to_string()),
            ("mel.n_mels", m.n_mels.to_string()),
            ("mel.fmin", m.fmin.to_string()),
            ("mel.fmax", m.fmax.to_string()),
            ("train.initial_lr", t.initial_lr.to_string()),
            ("train.lr_decay", t.lr_decay.to_string()),
            ("train.segment_length", t.segment_length.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.steps_per_epoch", t.steps_per_epoch.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.mrf_single_block", t.mrf_single_block.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("disc.use_mpd", d.use_mpd.to_string()),
            ("disc.use_msd", d.use_msd.to_string()),
            ("disc.periods", list(&d.periods)),
            ("disc.width_div", d.width_div.to_string()),
            ("loss.lambda_fm", l.lambda_fm.to_string()),
            ("loss.lambda_mel", l.lambda_mel.to_string()),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let (g, m, t, d, l) = (
            &mut self.generator,
            &mut self.mel,
            &mut self.train,
            &mut self.disc,
            &mut self.loss,
        );
        match key {
            "generator.variant" => {}
            "generator.h_u" => g.h_u = parse(v)?,
            "generator.k_u" => g.k_u = parse_list(v)?,
            "generator.k_r" => g.k_r = parse_list(v)?,
            "generator.d_r" => g.d_r = parse_dilations(v)?,
            "generator.input_mels" => g.input_mels = parse(v)?,
            "mel.sample_rate" => m.sample_rate = parse(v)?,
            "mel.n_fft" => m.n_fft = parse(v)?,
            "mel.win_size" => m.win_size = parse(v)?,
            "mel.hop" => m.hop = parse(v)?,
            "mel.n_mels" => m.n_mels = parse(v)?,
            "mel.fmin" => m.fmin = parse(v)?,
            "mel.fmax" => m.fmax = parse(v)?,
            "train.initial_lr" => t.initial_lr = parse(v)?,
            "train.lr_decay" => t.lr_decay = parse(v)?,
            "train.segment_length" => t.segment_length = parse(v)?,
            "train.batch_size" => t.batch_size = parse(v)?,
            "train.steps" => t.steps = parse(v)?,
            "train.steps_per_epoch" => t.steps_per_epoch = parse(v)?,
            "train.seed" => t.seed = parse(v)?,
            "train.mrf_single_block" => t.mrf_single_block = parse_bool(v)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(v)?,
            "disc.use_mpd" => d.use_mpd = parse_bool(v)?,
            "disc.use_msd" => d.use_msd = parse_bool(v)?,
            "disc.periods" => d.periods = parse_list(v)?,
            "disc.width_div" => d.width_div = parse(v)?,
            "loss.lambda_fm" => l.lambda_fm = parse(v)?,
            "loss.lambda_mel" => l.lambda_mel = parse(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses config text; `origin` names the source in error messages.
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::ConfigLine {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if let Some(prev) = seen.insert(k.clone(), line_no) {
                return Err(err(line_no, format!("{k} already set on line {prev}")));
            }
            pairs.push((line_no, k, v));
        }

        let mut cfg = RunConfig::default();
        if let Some((line_no, _, v)) = pairs.iter().find(|(_, k, _)| k == "generator.variant") {
            cfg.generator = if v == "custom" {
                if let Some(missing) = GENERATOR_FIELDS.iter().find(|f| !seen.contains_key(**f)) {
                    return Err(err(*line_no, format!("variant custom needs {missing}")));
                }
                GeneratorConfig {
                    name: "custom".into(),
                    ..GeneratorConfig::v1()
                }
            } else {
                GeneratorConfig::preset(v).map_err(|e| err(*line_no, e.to_string()))?
            };
        }
        for (line_no, k, v) in &pairs {
            cfg.set(k, v)
                .map_err(|m| err(*line_no, format!("{k}: {m}")))?;
        }
        cfg.validate().map_err(|e| {
            // point at the first line of the offending section when we can
            let msg = e.to_string();
            let section = msg.split(':').find_map(|s| {
                let s = s.trim().trim_start_matches("invalid configuration").trim();
                ["generator", "mel", "train", "disc", "loss"]
                    .into_iter()
                    .find(|p| s.starts_with(p))
            });
            match section.and_then(|s| pairs.iter().find(|(_, k, _)| k.starts_with(s))) {
                Some((line_no, _, _)) => err(*line_no, msg),
                None => e,
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for (k, v) in self.entries() {
            let head = k.split('.').next().unwrap_or("");
            if head != section {
                if !section.is_empty() {
                    s.push('\n');
                }
                let _ = writeln!(s, "# {head}");
                section = head;
            }
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.mel.validate()?;
        self.train.validate()?;
        self.disc.validate()?;
        self.loss.validate()?;
        if self.generator.input_mels != self.mel.n_mels {
            return Err(Error::Config(format!(
                "generator: input_mels {} differs from mel.n_mels {}",
                self.generator.input_mels, self.mel.n_mels
            )));
        }
        Ok(())
    }

    /// Generator actually trained, honouring `train.mrf_single_block`.
    pub fn effective_generator(&self) -> GeneratorConfig {
        if self.train.mrf_single_block {
            self.generator.single_block()
        } else {
            self.generator.clone()
        }
    }
}
