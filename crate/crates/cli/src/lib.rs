//! `osvs` command line: plan, administer, simulate, score and report an
//! oddball-serial visual search study stored in a workspace directory.

pub mod analysis;
pub mod commands;
pub mod error;
pub mod report;
pub mod workspace;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use osvs_core::erp::{DEFAULT_ARTIFACT_THRESHOLD_UV, DEFAULT_MEASUREMENT_CHANNEL};

pub use error::{CliError, Result};
pub use workspace::{Workspace, WORKSPACE_ENV};

#[derive(Debug, Parser)]
#[command(name = "osvs", version, about = "Oddball-serial visual search study toolkit")]
pub struct Cli {
    /// Study workspace directory.
    #[arg(long, global = true, env = WORKSPACE_ENV, default_value = ".")]
    pub workspace: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a session plan into plans/<name>.toml.
    Plan(PlanArgs),
    /// Administer a plan to one UI client over TCP and write its log.
    Serve(ServeArgs),
    /// Generate a synthetic cohort: profiles, plans, logs and optional EEG.
    Simulate(SimulateArgs),
    /// Score every log in logs/ against its plan.
    Score,
    /// Measure target ERPs for every recording in eeg/.
    Erp(ErpArgs),
    /// Friedman tests and correlation tables over the scored cohort.
    Stats(StatsArgs),
    /// Render tables, figure data and a summary into reports/.
    Report,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub seed: u64,
    /// Plan configuration file (TOML); defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "plan")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Plan name under plans/.
    #[arg(long, default_value = "plan")]
    pub plan: String,
    #[arg(long)]
    pub participant: String,
    #[arg(long, default_value = "127.0.0.1:7400")]
    pub bind: String,
    /// Show each cue for a fixed time instead of waiting for `ready`.
    #[arg(long)]
    pub cue_fixed_ms: Option<u32>,
    /// Stop after this many blocks.
    #[arg(long)]
    pub blocks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `default` or a cohort spec file (TOML).
    #[arg(long, default_value = "default")]
    pub cohort: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also synthesize EEG recordings.
    #[arg(long)]
    pub eeg: bool,
    /// Give every participant this plan instead of an individual one.
    #[arg(long)]
    pub plan: Option<String>,
}

#[derive(Debug, Args)]
pub struct ErpArgs {
    #[arg(long, default_value = DEFAULT_MEASUREMENT_CHANNEL)]
    pub channel: String,
    #[arg(long, default_value_t = DEFAULT_ARTIFACT_THRESHOLD_UV)]
    pub threshold_uv: f64,
    #[arg(long, default_value_t = 250.0)]
    pub search_start_ms: f64,
    #[arg(long, default_value_t = 900.0)]
    pub search_end_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Posthoc {
    #[default]
    Normal,
    Exact,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// How pairwise signed-rank p values are computed.
    #[arg(long, value_enum, default_value_t = Posthoc::Normal)]
    pub posthoc: Posthoc,
}

/// Run one subcommand. Progress lines go to stdout.
pub fn run(cli: &Cli) -> Result<()> {
    let ws = Workspace::new(&cli.workspace);
    match &cli.command {
        Command::Plan(a) => commands::plan(&ws, a),
        Command::Serve(a) => commands::serve(&ws, a),
        Command::Simulate(a) => commands::simulate(&ws, a),
        Command::Score => commands::score(&ws),
        Command::Erp(a) => commands::erp(&ws, a),
        Command::Stats(a) => commands::stats(&ws, a),
        Command::Report => commands::report(&ws),
    }
}
