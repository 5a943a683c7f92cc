use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use avdoa::dataset::{simulate, ScenarioConfig, Split};
use avdoa::io::kv::KeyValues;
use avdoa::nn::Architecture;
use avdoa::pipeline::{self, Corruption, GridSpec, Summary, TrainSettings};
use avdoa::{Error, Execution};

#[derive(Parser)]
#[command(name = "avdoa", version, about = "Audio-visual multi-speaker DoA estimation")]
struct Cli {
    /// Seed for everything random in the command (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key = value settings file for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run per-frame work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Avc,
    Avaw,
    #[value(name = "gcc_only")]
    GccOnly,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Avc => Architecture::Avc,
            ArchArg::Avaw => Architecture::Avaw,
            ArchArg::GccOnly => Architecture::GccOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (audio chunks, detections, manifest).
    Simulate {
        /// Overrides the frame count from the config.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Extract GCC-PHAT and visual feature stores from a dataset.
    Features {
        dataset: PathBuf,
        /// Additive white noise SNR in dB.
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
        /// Percentage of frames whose detections are swapped.
        #[arg(long)]
        fdsp: Option<f64>,
    },
    /// Train a model on the train split of a features directory.
    Train {
        #[arg(value_enum)]
        arch: ArchArg,
        features: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// Comma-separated hidden widths.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
    },
    /// Evaluate a checkpoint on a features directory.
    Eval {
        checkpoint: PathBuf,
        features: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// MAE/ACC over an SNR x swap-percentage grid on the test split.
    Robustness {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Comma-separated SNRs in dB; `clean` for no noise.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-10,0,10,20,clean")]
        snr_levels: Vec<String>,
        /// Comma-separated swap percentages.
        #[arg(long, value_delimiter = ',', default_value = "0,10,30,50,70")]
        fdsp_levels: Vec<f64>,
        /// Also write an SVG line chart.
        #[arg(long)]
        svg: bool,
    },
    /// SRP-PHAT with the known source count.
    Baseline {
        dataset: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn percent(p: f64) -> Result<f64, Failure> {
    if !(0.0..=100.0).contains(&p) {
        return Err(usage(format!("swap percentage {p} is outside [0, 100]")));
    }
    Ok(p / 100.0)
}

fn parse_snr(s: &str) -> Result<Option<f64>, Failure> {
    if s.eq_ignore_ascii_case("clean") {
        return Ok(None);
    }
    s.trim()
        .parse()
        .map(Some)
        .map_err(|_| usage(format!("bad SNR level `{s}`")))
}

fn read_config(path: Option<&Path>) -> Result<KeyValues, Failure> {
    Ok(match path {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::default(),
    })
}

fn print_summary(s: &Summary) {
    print!("{}", s.to_csv());
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let out = cli.out.clone().ok_or_else(|| usage("--out is required"));
    let kv = read_config(cli.config.as_deref())?;

    match cli.command {
        Command::Simulate { frames } => {
            let mut cfg = ScenarioConfig::from_key_values(&kv).map_err(Failure::Usage)?;
            if let Some(f) = frames {
                cfg.frames = f;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = out?;
            let ds = simulate(&cfg, &out, exec)?;
            println!("wrote {} frames to {}", ds.frames.len(), out.display());
        }
        Command::Features { dataset, snr, fdsp } => {
            let corruption = Corruption {
                snr_db: snr,
                fdsp: fdsp.map(percent).transpose()?,
                seed: cli.seed.unwrap_or(0),
            };
            corruption.validate()?;
            let out = out?;
            let set = pipeline::features_command(&dataset, &corruption, &out, exec)?;
            println!("wrote features for {} frames to {}", set.len(), out.display());
        }
        Command::Train {
            arch,
            features,
            epochs,
            batch,
            hidden,
        } => {
            let mut settings = TrainSettings::from_key_values(&kv).map_err(Failure::Usage)?;
            if let Some(e) = epochs {
                settings.train.epochs = e;
            }
            if let Some(b) = batch {
                settings.train.batch_size = b;
            }
            if let Some(h) = hidden {
                settings.hidden = h;
            }
            if let Some(s) = cli.seed {
                settings.train.seed = s;
            }
            settings.validate().map_err(Failure::Usage)?;
            let out = out?;
            let outcome = pipeline::train_command(&features, arch.into(), &settings, &out)?;
            let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
            println!("trained {} for {} epochs, final loss {last:.6}", outcome.model.arch(), outcome.loss_history.len());
        }
        Command::Eval {
            checkpoint,
            features,
            split,
        } => {
            let out = out?;
            let ev = pipeline::eval_command(&checkpoint, &features, split.split(), &out, exec)?;
            print_summary(&ev.summary);
        }
        Command::Robustness {
            checkpoint,
            dataset,
            snr_levels,
            fdsp_levels,
            svg,
        } => {
            let spec = GridSpec {
                snr_levels: snr_levels.iter().map(|s| parse_snr(s)).collect::<Result<_, _>>()?,
                fdsp_levels: fdsp_levels.into_iter().map(percent).collect::<Result<_, _>>()?,
                seed: cli.seed.unwrap_or(0),
            };
            spec.validate()?;
            let out = out?;
            let grid = pipeline::robustness_command(&checkpoint, &dataset, &spec, svg, &out, exec)?;
            print!("{}", grid.to_csv());
        }
        Command::Baseline { dataset, snr, split } => {
            let out = out?;
            let ev = pipeline::baseline_command(&dataset, split.split(), snr, cli.seed.unwrap_or(0), &out, exec)?;
            print_summary(&ev.summary);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric_failure() {
        3
    } else if e.is_io() {
        4
    } else {
        2
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
