//! `motivelog`: the pipeline stages as composable subcommands over files.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "motivelog", version, about = "Privacy-preserving keyboard-log abstraction and input-motive analysis")]
pub struct Cli {
    /// Write the run manifest here instead of to stderr.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Io {
    /// Input file, `-` for stdin.
    #[arg(long, short, default_value = "-")]
    input: PathBuf,
    /// Output file, `-` for stdout.
    #[arg(long, short, default_value = "-")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic snapshot corpus with its fixtures and ground truth.
    Gen {
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus spec (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, short, default_value = "-")]
        out: PathBuf,
        /// Directory for d.dic, wl.txt, mapping.tsv, appcats.tsv and
        /// truth.tsv; defaults to the directory of --out.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Snapshot events to privacy-abstracted word events.
    Abstract {
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        whitelist: PathBuf,
        /// Inactivity gap that ends a session, in milliseconds.
        #[arg(long)]
        gap_timeout: Option<u64>,
        /// Pipeline config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Session index (TSV) carrying each session's prompt to `sessions`.
        #[arg(long)]
        index: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Word events to one record per text input.
    Sessions {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        appcats: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Redact prompts seen by a single participant.
    Prefilter {
        /// Redaction report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Keyword-code distinct prompts; write the mapping and the residual.
    Autocode {
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Manual-coding cutoff as a fraction of all texts.
        #[arg(long)]
        cutoff: Option<f64>,
        /// Residual prompts with counts (TSV).
        #[arg(long)]
        residual: Option<PathBuf>,
        /// Residual prompts above the cutoff (TSV).
        #[arg(long)]
        queue: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Assign a motive to every record.
    Classify {
        /// Mapping files; earlier files win on conflicts.
        #[arg(long)]
        mapping: Vec<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Coverage, per-group statistics, rank tests and the long tail.
    Stats {
        #[arg(long, short, default_value = "-")]
        input: PathBuf,
        /// Output directory for stats.json and stats.tsv.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Motive against app-category comparison table.
    Compare {
        /// `motive:<Motive>,app:<category>`; repeatable.
        #[arg(long = "pair")]
        pairs: Vec<String>,
        #[command(flatten)]
        io: Io,
    },
    /// Top-k prompt share.
    Longtail {
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        io: Io,
    },
    /// Agreement between two rater code files, or from po/pe/n.
    Kappa {
        #[arg(long, requires = "b", conflicts_with_all = ["po", "pe", "n"])]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        #[arg(long, requires_all = ["pe", "n"])]
        po: Option<f64>,
        #[arg(long, requires = "po")]
        pe: Option<f64>,
        #[arg(long, requires = "po")]
        n: Option<u64>,
        #[arg(long, short, default_value = "-")]
        out: PathBuf,
    },
    /// Run the coding service.
    Serve {
        #[arg(long, env = "MOTIVELOG_STORE")]
        store: PathBuf,
        /// Residual prompts (TSV); required when the store is new.
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Static UI bundle served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        round_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
