mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qksdp::certify::RdMode;
use qksdp::instance::{Family, Format};
use qksdp::solver::RankMode;

#[derive(Parser, Debug)]
#[command(name = "qksdp", version, about = "Low-rank SDP bounds for the quadratic knapsack problem")]
struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a generated instance to a file.
    Generate(GenerateArgs),
    /// Solve the relaxation of one instance.
    Solve(SolveArgs),
    /// Re-check a certificate from a solve report.
    Certify(CertifyArgs),
    /// Compare the solver with brute force on a small instance.
    Oracle(OracleArgs),
    /// Run a suite of generated instances and tabulate the results.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct GenFlags {
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Density of the profit matrix.
    #[arg(long, default_value_t = 0.25)]
    p: f64,
    /// Capacity as a fraction of the total weight.
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Round the capacity up to an integer.
    #[arg(long)]
    integer_capacity: bool,
}

#[derive(Args, Debug, Clone)]
struct InputFlags {
    /// Instance file.
    #[arg(long = "in", value_name = "FILE", conflicts_with = "generate")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "qkp-text", value_parser = parse_format)]
    format: Format,
    /// Generate the instance instead of reading it.
    #[arg(long, value_name = "FAMILY", value_parser = parse_family)]
    generate: Option<Family>,
    #[command(flatten)]
    gen: GenFlags,
}

#[derive(Args, Debug, Clone)]
struct SolverFlags {
    /// Factorization rank; chosen from the profit structure when omitted.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long, default_value = "auto", value_parser = parse_rank_mode)]
    rank_mode: RankMode,
    /// KKT residue tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0.1)]
    delta0: f64,
    /// Wall-clock limit in seconds.
    #[arg(long, default_value_t = 3600.0)]
    max_time: f64,
    #[arg(long, default_value = "auto", value_parser = parse_rd_mode)]
    rd_mode: RdMode,
    /// Round the relaxed solution to a knapsack solution.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    round: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_family)]
    family: Family,
    #[command(flatten)]
    gen: GenFlags,
    #[arg(long, default_value = "qkp-text", value_parser = parse_format)]
    format: Format,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    input: InputFlags,
    #[command(flatten)]
    solver: SolverFlags,
    /// Append a results row to this CSV file.
    #[arg(long, value_name = "FILE")]
    csv_out: Option<PathBuf>,
    /// Write the detailed report (duals and final factor) here.
    #[arg(long, value_name = "FILE")]
    report_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[command(flatten)]
    input: InputFlags,
    /// Report written by `solve --report-out`.
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
    /// Residue mode; defaults to the one recorded in the report.
    #[arg(long, value_parser = parse_rd_mode)]
    rd_mode: Option<RdMode>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    input: InputFlags,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated family names.
    #[arg(long, default_value = "random-qkp")]
    families: String,
    /// Comma-separated problem sizes.
    #[arg(long, default_value = "100")]
    sizes: String,
    /// Comma-separated generator seeds.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Comma-separated capacity fractions.
    #[arg(long, default_value = "0.5")]
    betas: String,
    #[arg(long, default_value_t = 0.25)]
    p: f64,
    #[command(flatten)]
    solver: SolverFlags,
    /// Stop starting new runs once this many seconds have passed.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long, value_name = "FILE")]
    csv_out: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: qksdp::instance::InstanceError| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: qksdp::instance::InstanceError| e.to_string())
}

fn parse_rank_mode(s: &str) -> Result<RankMode, String> {
    s.parse()
}

fn parse_rd_mode(s: &str) -> Result<RdMode, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Solve(a) => commands::solve(a),
        Command::Certify(a) => commands::certify(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
