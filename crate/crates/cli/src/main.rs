use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analysis;
mod config;
mod data;
mod run;

/// Exit statuses. clap itself exits with 2 on malformed command lines.
pub mod exit {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const FORMAT: u8 = 4;
    pub const SHAPE: u8 = 5;
    pub const DIVERGED: u8 = 6;
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(saeoverlap::Error),
}

impl From<saeoverlap::Error> for CliError {
    fn from(e: saeoverlap::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        use saeoverlap::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidArgument(_)) => exit::USAGE,
            CliError::Core(E::Io { .. }) => exit::IO,
            CliError::Core(E::Format(_)) => exit::FORMAT,
            CliError::Core(E::Shape { .. }) => exit::SHAPE,
            CliError::Core(E::Divergence { .. }) => exit::DIVERGED,
            CliError::Core(_) => exit::OTHER,
        }
    }
}

#[derive(Parser)]
#[command(name = "saeoverlap", version, about = "Train SAEs across seeds and measure which latents they share")]
struct Cli {
    /// TOML file with one table of settings per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "SAEOVERLAP_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sparse superposition dataset with known features.
    GenSynthetic(data::GenArgs),
    /// Train one SAE.
    Train(data::TrainArgs),
    /// Train a grid of seeds, widths and k, and compare seeds within each cell.
    Sweep(data::SweepArgs),
    /// Match the latents of two SAEs.
    Align(analysis::AlignArgs),
    /// Only-in-base fraction against subsets of other seeds.
    Overlap(analysis::OverlapArgs),
    /// Firing counts of a base SAE against how often its latents are shared.
    Freq(analysis::FreqArgs),
    /// Fit y = a k^-b (+ c) to an only-in-base curve.
    FitPowerlaw(analysis::FitArgs),
    /// Bin externally produced explanation scores by alignment.
    Scores(analysis::ScoresArgs),
    /// Collect the manifests and summaries under a directory.
    Report(analysis::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(exit::OTHER);
        }
    }
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::GenSynthetic(a) => data::gen_synthetic(a, cfg),
        Command::Train(a) => data::train(a, cfg),
        Command::Sweep(a) => data::sweep(a, cfg),
        Command::Align(a) => analysis::align(a, cfg),
        Command::Overlap(a) => analysis::overlap(a, cfg),
        Command::Freq(a) => analysis::freq(a, cfg),
        Command::FitPowerlaw(a) => analysis::fit_powerlaw(a, cfg),
        Command::Scores(a) => analysis::scores(a, cfg),
        Command::Report(a) => analysis::report(a, cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// Runs `body` inside an output directory and writes the manifest whatever
/// the outcome.
pub fn with_run<S: serde::Serialize>(
    command: &str,
    out: Option<&std::path::Path>,
    settings: &S,
    body: impl FnOnce(&mut run::Run) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let out = out.ok_or_else(|| CliError::Usage(format!("{command}: missing --out")))?;
    let mut r = run::Run::new(command, out, config::echo(settings))?;
    let result = body(&mut r);
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("error: {e}"),
    };
    let written = r.finish(&status);
    result?;
    written.map_err(|e| CliError::Core(saeoverlap::Error::Io { path: out.join(run::MANIFEST), source: e }))
}

pub fn required<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required setting `{name}`")))
}
