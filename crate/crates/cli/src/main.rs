mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ganvoc",
    version,
    about = "GAN vocoder: training, synthesis, benchmarks and toy experiments"
)]
struct Cli {
    /// Threads for matrix products.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Run configuration (key = value text). Defaults to V1 with the
    /// standard training setup.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Generator preset, overriding the config's generator section.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on every .wav file in a directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override train.steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synthesize a waveform from a mel file, or from a wav via its mel.
    Synth {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `.wav` for copy synthesis, anything else is read as a mel file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time synthesis speed.
    Bench {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Weights to load; random weights otherwise (speed is unaffected).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Parameter counts per generator module.
    Params {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Classify sinusoids by frequency with period and scale discriminators.
    ExpB1 {
        /// True-label ratios; defaults to 0.99, 0.995 and 0.999.
        #[arg(long, value_delimiter = ',')]
        ratio: Vec<f64>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// 4000/800 shorter clips and narrower discriminators.
        #[arg(long)]
        fast: bool,
        /// Directory for the table and per-run records.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a sinc target adversarially against each discriminator family.
    ExpB2 {
        /// mpd, msd or both.
        #[arg(long, default_value = "both")]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        steps: Option<usize>,
        /// 2000 steps instead of 10000.
        #[arg(long)]
        fast: bool,
        /// Directory for columnar signal and spectrum files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean absolute difference between a wav's mel and a mel file.
    Melcmp {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        mel: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HFG_LOG", "warn")).init();
    let cli = Cli::parse();
    ganvoc::tensor::set_gemm_threads(cli.threads);
    let result = match cli.command {
        Command::Train {
            cfg,
            data,
            out,
            seed,
            steps,
            resume,
        } => commands::train(&cfg, &data, &out, seed, steps, resume.as_deref()),
        Command::Synth {
            cfg,
            checkpoint,
            input,
            out,
        } => commands::synth(&cfg, &checkpoint, &input, &out),
        Command::Bench {
            cfg,
            checkpoint,
            seconds,
            repeats,
        } => commands::bench(&cfg, checkpoint.as_deref(), seconds, repeats, cli.threads),
        Command::Params { cfg } => commands::params(&cfg),
        Command::ExpB1 {
            ratio,
            repeats,
            seed,
            fast,
            out,
        } => commands::exp_b1(&ratio, repeats, seed, fast, out.as_deref()),
        Command::ExpB2 {
            kind,
            seed,
            seeds,
            steps,
            fast,
            out,
        } => commands::exp_b2(&kind, seed, seeds, steps, fast, out.as_deref()),
        Command::Melcmp { cfg, wav, mel } => commands::melcmp(&cfg, &wav, &mel),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
