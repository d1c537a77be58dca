use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lstsd::experiment::{self, RunOptions};
use lstsd::gradcheck;

#[derive(Parser)]
#[command(name = "lstsd", version, about = "Long short-term sample distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy × sweep point × seed of an experiment config.
    #[command(after_long_help = experiment::keys_help())]
    Run {
        config: PathBuf,
        /// Comma-separated seeds replacing the config's `seeds`.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
        /// Output root (default: output.dir, then $LSTSD_OUT, then ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run cells on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Tabulate finished runs found under the given directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Label or policy name of the reference row.
        #[arg(long)]
        reference: String,
    },
    /// Check backward gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run {
            config,
            seed_override,
            out,
            parallel,
        } => std::fs::read_to_string(&config)
            .map_err(|e| lstsd::Error::Io { path: config, source: e })
            .and_then(|text| experiment::parse_config(&text))
            .and_then(|cfg| {
                let opts = RunOptions {
                    seed_override,
                    out_root: out,
                    parallel: parallel.then_some(true),
                };
                experiment::run_experiment(&cfg, &opts)
            })
            .map(|outcome| {
                print!("{}", outcome.table.render());
                println!("results in {}", outcome.dir.display());
                true
            }),
        Command::Compare { dirs, reference } => experiment::compare_dirs(&dirs, &reference).map(|t| {
            print!("{}", t.render());
            true
        }),
        Command::Gradcheck { seed } => gradcheck::run_suite(seed).map(|r| {
            print!("{}", r.render());
            r.passed()
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
