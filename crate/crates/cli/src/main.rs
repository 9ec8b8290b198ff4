use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;
mod policy;

use policy::Kind;

/// Question answering by navigating document structure.
#[derive(Debug, Parser)]
#[command(name = "treenav", version, about, long_about = None)]
#[command(after_help = "Log level is read from TREENAV_LOG (error, warn, info, debug, trace).")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Dqn,
    Docqn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Checkpoint,
    Random,
    Tfidf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnsembleArg {
    Threshold,
    Answer,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a data directory from raw document and question files.
    Ingest {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep material before the first section heading.
        #[arg(long)]
        keep_preface: bool,
    },
    /// Generate a synthetic corpus from a TOML spec.
    GenCorpus {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print dataset statistics and write the FAO histogram.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fao_csv: PathBuf,
    },
    /// Train a navigation agent on the train split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        coupled: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a policy over a split and write a JSON-lines trace.
    Navigate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        policy: PolicyArg,
        #[arg(long)]
        trace: PathBuf,
        /// Checkpoint file for `--policy checkpoint`.
        #[arg(long, required_if_eq("policy", "checkpoint"))]
        checkpoint: Option<PathBuf>,
        /// Training config supplying reader settings and the evaluation budget.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dev")]
        split: SplitArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Policy name recorded in the trace.
        #[arg(long)]
        name: Option<String>,
    },
    /// Run a baseline, or ensemble one with an agent's trace.
    Baseline {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, requires = "agent")]
        ensemble: Option<EnsembleArg>,
        /// Index threshold for `--ensemble threshold`; tuned on the given pairs when absent.
        #[arg(long)]
        l: Option<u32>,
        /// Agent trace file for ensembles.
        #[arg(long)]
        agent: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dev")]
        split: SplitArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate traces into a JSON report and CSV tables.
    Eval {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TREENAV_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
