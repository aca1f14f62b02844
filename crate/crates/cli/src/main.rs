mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use chladni_core::model::Variant;

#[derive(Parser)]
#[command(name = "chladni", version, about = "Chladni pattern recognition and sonification")]
struct Cli {
    /// Seed for every random choice (dataset rendering, splits, training, benchmarks).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with "dataset", "model", "train" and "service" sections overriding the defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Basic,
    Cbam5,
    Cbam7,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Basic => Variant::Basic,
            VariantArg::Cbam5 => Variant::Cbam5,
            VariantArg::Cbam7 => Variant::Cbam7,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset and its manifest.
    GenDataset {
        #[arg(long)]
        out: PathBuf,
        /// Calibration file with the mode table (defaults to the bundled one).
        #[arg(long)]
        modes: Option<PathBuf>,
        #[arg(long)]
        base_per_mode: Option<usize>,
        #[arg(long)]
        augment_factor: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        split_ratio: Option<f64>,
    },
    /// Train one model variant on a dataset's training split.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "cbam5")]
        variant: VariantArg,
        /// Model input side; defaults to the dataset's image size.
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        modes: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print the report as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train and compare the basic, 7x7 CBAM and 5x5 CBAM variants.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        image_size: Option<usize>,
        /// Directory for the three checkpoints and ablation.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        modes: Option<PathBuf>,
    },
    /// Run the UDP recognition link and the JSON bridge until killed.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        listen_port: Option<u16>,
        #[arg(long)]
        reply_port: Option<u16>,
        #[arg(long)]
        bridge_port: Option<u16>,
        #[arg(long)]
        bind: Option<std::net::IpAddr>,
        #[arg(long)]
        modes: Option<PathBuf>,
    },
    /// Time loopback frames through an in-process service.
    BenchLink {
        #[arg(long, default_value_t = 1000)]
        frames: usize,
        /// Checkpoint to serve; an untrained desk-size model when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 1000)]
        timeout_ms: u64,
    },
    /// Time single-image inference.
    BenchInfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
    },
    /// Classify an image and render its mode's frequency as a WAV file.
    Sonify {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0, value_parser = positive_seconds)]
        duration: f64,
        #[arg(long, default_value_t = 0.8)]
        amplitude: f64,
        #[arg(long)]
        modes: Option<PathBuf>,
    },
}

fn positive_seconds(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("duration must be a positive number of seconds, got {s}"))
    }
}

/// An error in how the tool was invoked rather than in the data; exits 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Several library errors already quote their source, so skip causes
            // whose text is already on the line.
            let mut line = e.to_string();
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !line.contains(&text) {
                    line = format!("{line}: {text}");
                }
            }
            eprintln!("error: {line}");
            if e.chain().any(|c| c.is::<Usage>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
