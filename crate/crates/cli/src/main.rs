//! `mia-audit`: synthesize corpora, preprocess, pretrain encoders, attack
//! them and render reports.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for bad configuration, arguments or input files.
const EXIT_USER: u8 = 2;
/// Exit status for failures inside the toolkit.
const EXIT_INTERNAL: u8 = 1;

#[derive(Parser)]
#[command(name = "mia-audit", version, about = "Membership-inference audits for self-supervised ECG encoders")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-window work.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic cohorts as record files.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample, normalize and window a record directory into a cache.
    Preprocess {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        cache: PathBuf,
    },
    /// Pretrain one encoder per (training dataset, family).
    Pretrain {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[command(flatten)]
        families: FamilyFilter,
    },
    /// Run the configured attacks and write the audit report.
    Attack {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        families: FamilyFilter,
    },
    /// Render plots and the metrics table from a report.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Show negative advantages as 0 in the table.
        #[arg(long)]
        clip_negative_adv: bool,
    },
}

#[derive(Args)]
struct FamilyFilter {
    /// Restrict to these encoder families (repeatable).
    #[arg(long = "family")]
    names: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIA_AUDIT_LOG", "error")).init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(EXIT_INTERNAL);
    }
    match std::panic::catch_unwind(|| commands::run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
