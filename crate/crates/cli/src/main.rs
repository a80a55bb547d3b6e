//! `medtem`: fixture generation, corpus ingestion, model training,
//! prediction, extraction, evaluation and self-verification.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "medtem", version, about = "Medication timelines from clinical discharge summaries")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Global {
    /// Seed for fixtures, initialisation and shuffling [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Leave wall-clock timings out of the log.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Configuration file with `[ner]` and `[rel]` sections.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for document-parallel inference.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Log more to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write a synthetic annotated corpus.
    Fixture {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Omit the Methotrexate example document.
        #[arg(long)]
        no_fig1: bool,
    },
    /// Parse an annotated corpus directory and report what was found.
    Ingest {
        dir: PathBuf,
        /// Skip malformed annotation lines instead of failing.
        #[arg(long)]
        lenient: bool,
        /// Tag scheme for --conll (`medication` or `events`).
        #[arg(long)]
        scheme: Option<String>,
        /// Also write the IOB projection as CoNLL.
        #[arg(long, value_name = "FILE")]
        conll: Option<PathBuf>,
    },
    /// Train a tagger on a corpus directory or CoNLL file.
    TrainNer {
        #[arg(long, value_name = "PATH")]
        train: PathBuf,
        #[arg(long, value_name = "PATH")]
        val: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// BILSTM_CRF or CNN_BILSTM.
        #[arg(long)]
        architecture: Option<String>,
        #[arg(long)]
        scheme: Option<String>,
        /// Word vectors in text format, one word per line.
        #[arg(long, value_name = "FILE")]
        embeddings: Option<PathBuf>,
        /// Per-epoch loss and accuracy as CSV.
        #[arg(long, value_name = "FILE")]
        history: Option<PathBuf>,
    },
    /// Train the temporal relation classifier on gold relations.
    TrainRel {
        #[arg(long, value_name = "DIR")]
        train: PathBuf,
        #[arg(long, value_name = "DIR")]
        val: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Oversample short classes up to n_per_class instead of capping.
        #[arg(long)]
        with_replacement: bool,
        /// Dump the balanced training instances.
        #[arg(long, value_name = "FILE")]
        instances: Option<PathBuf>,
    },
    /// Tag documents and write CoNLL.
    Predict {
        #[arg(long, value_name = "FILE")]
        ner: PathBuf,
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Produce the medication status table.
    Extract {
        #[arg(long, value_name = "FILE")]
        ner: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        rel: Option<PathBuf>,
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Use the annotations next to each document instead of models.
        #[arg(long)]
        gold: bool,
        /// ID of the first row.
        #[arg(long, default_value_t = 1)]
        id_base: u64,
        /// JSON lines instead of CSV.
        #[arg(long)]
        jsonl: bool,
    },
    /// Score predicted CoNLL labels against gold.
    Eval {
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        /// Add exact-match entity scores.
        #[arg(long)]
        spans: bool,
        #[arg(long)]
        json: bool,
        /// Score PAD like any other label.
        #[arg(long)]
        include_padding: bool,
    },
    /// Run the built-in correctness suites.
    Verify,
}

/// Exit status classes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(medtem::Error),
    Verification(String),
}

impl From<medtem::Error> for CliError {
    fn from(e: medtem::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
            CliError::Verification(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Verification(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn init_logging(g: &Global) {
    let level = match g.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let mut b = env_logger::Builder::new();
    b.filter_level(level).parse_default_env().target(env_logger::Target::Stderr);
    if g.deterministic {
        b.format_timestamp(None);
    }
    let _ = b.try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(&cli.global);
    match commands::run(&cli.global, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
