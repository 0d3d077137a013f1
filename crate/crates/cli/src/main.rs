//! `turboae`: train, pre-train, fine-tune, evaluate and plot Turbo-autoencoders.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{EvalArgs, SweepArgs, TrainArgs};
use config::ConfigError;
use turboae::evaluate::StopRule;

#[derive(Parser)]
#[command(name = "turboae", version, about = "Turbo-autoencoder channel codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Block length; overrides the config.
    #[arg(long)]
    k: Option<usize>,
    /// Global seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs; overrides the config.
    #[arg(long)]
    epochs: Option<usize>,
    /// Run directory; overrides the config and the output root.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Any config key, e.g. `--set schedule.t_enc=50` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Start from this checkpoint; a different --k fine-tunes to the new length.
    #[arg(long)]
    from_checkpoint: Option<PathBuf>,
}

impl RunFlags {
    fn into_args(self) -> TrainArgs {
        let mut overrides = self.set;
        if let Some(k) = self.k {
            overrides.push(format!("k={k}"));
        }
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(epochs) = self.epochs {
            overrides.push(format!("schedule.epochs={epochs}"));
        }
        if let Some(dir) = self.output {
            overrides.push(format!("output_dir={}", toml::Value::from(dir.to_string_lossy().into_owned())));
        }
        TrainArgs {
            config: self.config,
            overrides,
            from_checkpoint: self.from_checkpoint,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Alternating training of a parallel or serial model.
    Train(RunFlags),
    /// Component-wise training with Gaussian a-priori LLRs.
    Pretrain {
        #[command(flatten)]
        run: RunFlags,
        /// Train only this component (1 or 2); both are trained and assembled otherwise.
        #[arg(long)]
        component: Option<usize>,
    },
    /// Continue a checkpoint at a new block length.
    Finetune(RunFlags),
    /// Monte-Carlo BER/BLER of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config supplying the [eval] section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated Eb/N0 points in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        min_block_errors: Option<u64>,
        #[arg(long)]
        max_blocks: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Decoder iterations; weight-sharing models accept any count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Treat the last 7 bits as a CRC and decode with the bit-flip search.
        #[arg(long)]
        crc7: bool,
        /// Add uncoded-BPSK and normal-approximation columns.
        #[arg(long)]
        reference: bool,
        /// Output CSV; defaults to eval.csv next to the checkpoint.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// SNR at a target BER for several checkpoints.
    Sweep {
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        target_ber: f64,
        /// Search interval in dB, `lo,hi`.
        #[arg(long, value_parser = parse_bracket, default_value = "-2,12", allow_hyphen_values = true)]
        bracket: (f64, f64),
        #[arg(long, default_value_t = 0.05)]
        tolerance_db: f64,
        #[arg(long, default_value_t = StopRule::default().min_block_errors)]
        min_block_errors: u64,
        #[arg(long, default_value_t = StopRule::default().max_blocks)]
        max_blocks: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; stdout otherwise.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// SVG curves from evaluation, sweep or training CSVs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn parse_bracket(s: &str) -> Result<(f64, f64), String> {
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    match s.split_once(',') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => Err("expected `lo,hi`".into()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(run) => commands::train(&run.into_args()),
        Command::Pretrain { run, component } => commands::pretrain(&run.into_args(), component),
        Command::Finetune(run) => commands::finetune(&run.into_args()),
        Command::Eval {
            checkpoint,
            config,
            snr,
            min_block_errors,
            max_blocks,
            seed,
            iterations,
            crc7,
            reference,
            output,
        } => commands::eval(&EvalArgs {
            checkpoint,
            config,
            overrides: Vec::new(),
            snr_db: snr,
            min_block_errors,
            max_blocks,
            seed,
            iterations,
            crc7,
            reference,
            output,
        }),
        Command::Sweep {
            checkpoints,
            target_ber,
            bracket,
            tolerance_db,
            min_block_errors,
            max_blocks,
            seed,
            output,
        } => commands::sweep(&SweepArgs {
            checkpoints,
            target_ber,
            bracket,
            tolerance_db,
            stop: StopRule {
                min_block_errors,
                max_blocks,
            },
            seed,
            output,
        }),
        Command::Plot { csv, output_dir } => {
            for out in plot::plot(&csv, output_dir.as_deref())? {
                eprintln!("wrote {}", out.display());
            }
            Ok(())
        }
    }
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some() || matches!(e.downcast_ref::<turboae::Error>(), Some(turboae::Error::Config(_)))
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_config_error(&err) { 2 } else { 1 })
        }
    }
}
