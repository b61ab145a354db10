//! `carbonscale`: plan, simulate and sweep carbon-aware schedules, or serve the
//! what-if API.
//!
//! Exit codes: 0 ok, 2 invalid input, 3 infeasible job, 4 runtime failure.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "carbonscale", version, about = "Carbon-aware scaling for elastic batch jobs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan a schedule and print it with its metrics.
    Schedule(ScheduleArgs),
    /// Execute a policy slot by slot under forecast error, profile error and denial.
    Simulate(SimulateArgs),
    /// Vary one parameter (or the start slot) and tabulate every policy.
    Sweep(SweepArgs),
    /// Mean, standard deviation and coefficient of variation of a trace.
    Stats {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run the HTTP/JSON advisor service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Whole,
    Prorated,
}

impl From<Mode> for carbonscale::scheduler::AccountingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Whole => Self::WholeSlot,
            Mode::Prorated => Self::Prorated,
        }
    }
}

/// Inputs shared by every planning command. Flags override job-file fields.
#[derive(Debug, Args)]
struct JobArgs {
    /// Trace CSV with `timestamp,carbon_intensity_avg` rows.
    #[arg(long)]
    trace: PathBuf,
    /// Job JSON file.
    #[arg(long)]
    job: PathBuf,
    /// Curve JSON file or preset name; overrides the job file's curve.
    #[arg(long)]
    curve: Option<String>,
    #[arg(long)]
    arrival: Option<usize>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    min_servers: Option<u32>,
    #[arg(long)]
    max_servers: Option<u32>,
    #[arg(long)]
    completion: Option<usize>,
    /// Per-server power in watts.
    #[arg(long)]
    power: Option<f64>,
    #[arg(long, value_enum, default_value = "prorated")]
    mode: Mode,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[command(flatten)]
    job: JobArgs,
    /// greedy, agnostic, sr_deadline, sr_threshold[(P)] or static(K).
    #[arg(long, default_value = "greedy")]
    policy: String,
    /// Scale factor for `--policy static`.
    #[arg(long)]
    k: Option<u32>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimFlags {
    /// Forecast error bound, percent.
    #[arg(long, default_value_t = 0.0)]
    forecast_error: f64,
    /// Capacity-curve error bound, percent.
    #[arg(long, default_value_t = 0.0)]
    profile_error: f64,
    /// Probability that each requested extra server is refused.
    #[arg(long, default_value_t = 0.0)]
    denial: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Relative deviation that triggers a replan.
    #[arg(long, default_value_t = 0.05)]
    recompute_threshold: f64,
    /// Never replan.
    #[arg(long)]
    no_recompute: bool,
    /// Forecast refresh horizon in slots (0 redraws at full error).
    #[arg(long, default_value_t = 24)]
    refresh_horizon: usize,
    /// Dead time per allocation change, seconds.
    #[arg(long, default_value_t = 0.0)]
    overhead_secs: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    job: JobArgs,
    #[arg(long, default_value = "greedy")]
    policy: String,
    #[arg(long)]
    k: Option<u32>,
    #[command(flatten)]
    sim: SimFlags,
    /// Independent runs with seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    job: JobArgs,
    /// completion_time, job_length, cluster_size, scale_factor, denial,
    /// forecast_error, profile_error or start_time.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values (not used for start_time).
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Start-slot step for start_time.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Comma-separated policies.
    #[arg(long, value_delimiter = ',', default_value = "agnostic,sr_deadline,greedy")]
    policies: Vec<String>,
    #[command(flatten)]
    sim: SimFlags,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Directory of trace CSVs [env: CARBONSCHED_TRACES].
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Listen address [env: CARBONSCHED_ADDR].
    #[arg(long)]
    addr: Option<String>,
    /// Largest sweep (cells) a request may ask for.
    #[arg(long)]
    sweep_budget: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Schedule(a) => commands::schedule(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Stats { trace } => commands::stats(&trace),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.error);
            ExitCode::from(e.kind as u8)
        }
    }
}
