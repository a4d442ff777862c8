use std::fs::OpenOptions;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use streamix_bench::{
    run_interleaving_oracle, run_msgrate, BenchConfig, BenchMode, CSV_HEADER, MAX_ORACLE_OPS,
};

#[derive(Parser)]
#[command(
    name = "streamix-bench",
    version,
    about = "Message-rate benchmark and matching oracle"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Global,
    Pervci,
    Stream,
}

impl From<Mode> for BenchMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Global => BenchMode::Global,
            Mode::Pervci => BenchMode::PerVci,
            Mode::Stream => BenchMode::Stream,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pairwise multithreaded message rate between two logical processes.
    Msgrate {
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 8)]
        msg_bytes: usize,
        /// Timed messages per thread.
        #[arg(long, default_value_t = 100_000)]
        iters: usize,
        #[arg(long, default_value_t = 64)]
        window: usize,
        #[arg(long, default_value_t = 1_000)]
        warmup: usize,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Append a result row here (the header is written for new files).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Exhaustively compare matching outcomes with the reference matcher.
    Oracle {
        #[arg(long, default_value_t = MAX_ORACLE_OPS)]
        max_ops: usize,
    },
}

fn write_csv(path: &PathBuf, record: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER)?;
    }
    w.write_record(record)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Msgrate {
            threads,
            msg_bytes,
            iters,
            window,
            warmup,
            mode,
            csv,
        } => {
            let cfg = BenchConfig {
                mode: mode.into(),
                threads,
                msg_bytes,
                iters,
                window,
                warmup,
            };
            let result = match run_msgrate(&cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let record = result.csv_record();
            println!("{}", CSV_HEADER.join(","));
            println!("{}", record.join(","));
            if let Some(path) = csv {
                if let Err(e) = write_csv(&path, &record) {
                    eprintln!("error: writing {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            ExitCode::SUCCESS
        }
        Command::Oracle { max_ops } => {
            if max_ops > MAX_ORACLE_OPS {
                eprintln!("error: --max-ops must be at most {MAX_ORACLE_OPS}");
                return ExitCode::FAILURE;
            }
            let report = run_interleaving_oracle(max_ops);
            print!("{report}");
            if report.is_clean() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
