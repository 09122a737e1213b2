use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unpg_core::run::{
    cmd_analyze, cmd_eval, cmd_train, parse_seed, parse_whisker_list, AnalyzeOptions, TrainOptions,
    SEED_ENV,
};
use unpg_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "unpg-kit",
    version,
    about = "Train, evaluate and analyze UNPG embedding runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Keep going when a step produces NaN or infinity.
        #[arg(long)]
        allow_nonfinite: bool,
    },
    /// Recompute metrics for a checkpoint and print them as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// JSON synthetic-data spec.
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare two runs, or sweep whisker sizes over the config of the first.
    Analyze {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Comma-separated whisker sizes, e.g. 0.5,1,1.5
        #[arg(long)]
        sweep_whisker: Option<String>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: PathBuf::from("<stdout>"),
        source: e,
    })?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            allow_nonfinite,
        } => {
            let seed_override = match std::env::var(SEED_ENV) {
                Ok(v) => Some(parse_seed(&v)?),
                Err(_) => None,
            };
            let record = cmd_train(
                &config,
                TrainOptions {
                    allow_nonfinite,
                    seed_override,
                },
            )?;
            if let Some(m) = record.final_metrics() {
                print_json(m)?;
            }
            Ok(())
        }
        Command::Eval { ckpt, data } => print_json(&cmd_eval(&ckpt, &data)?),
        Command::Analyze {
            dir_a,
            dir_b,
            sweep_whisker,
            bins,
            out,
        } => {
            let opts = AnalyzeOptions {
                bins,
                sweep_whisker: sweep_whisker
                    .as_deref()
                    .map(parse_whisker_list)
                    .transpose()?,
                out,
            };
            print_json(&cmd_analyze(&dir_a, &dir_b, &opts)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
