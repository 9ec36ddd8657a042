use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use psa_cli::commands;
use psa_cli::CliError;

#[derive(Parser)]
#[command(
    name = "psa",
    version,
    about = "Predictive sample assignment experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark file.
    Generate {
        /// Config file with benchmark keys (defaults apply when omitted).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the configured pipeline and write its tables to a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Benchmark file; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory; overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute metrics from a score file (split,score,correct).
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Also write the metrics CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare completed runs: aligned table on stdout, CSV via --out.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { spec, out, seed } => {
            println!("{}", commands::generate(spec.as_deref(), &out, seed)?);
        }
        Command::Train {
            config,
            data,
            out,
            seed,
        } => {
            println!(
                "{}",
                commands::train(config.as_deref(), data.as_deref(), out.as_deref(), seed)?
            );
        }
        Command::Eval { scores, out } => {
            let outcome = commands::eval(&scores)?;
            let report = match outcome.report {
                Ok(r) => r,
                Err(e) => {
                    if let Some(acc) = outcome.acc {
                        println!("acc\n{acc}");
                    }
                    return Err(e);
                }
            };
            let csv = commands::format_report_csv(&report);
            print!("{csv}");
            if let Some(path) = out {
                write_file(&path, &csv)?;
            }
        }
        Command::Report { runs, out } => {
            let table = commands::report(&runs)?;
            print!("{}", table.text);
            if let Some(path) = out {
                write_file(&path, &table.csv)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors count as configuration errors; --help is a success
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
