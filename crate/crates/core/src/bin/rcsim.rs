use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rcsim::experiment::{
    compare, format_table, load_app, load_cluster, load_trace, parse_seeds, read_summary,
    write_outputs, write_savings, Arrivals, Matrix,
};
use rcsim::sim::{CostModel, FailureSpec, Policy, SimConfig};
use rcsim::workload::DistKind;

#[derive(Parser)]
#[command(
    name = "rcsim",
    version,
    about = "Resource-centric serverless cluster simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a workload × policy × seed matrix and write reports.
    Run(RunArgs),
    /// Compare summaries against the faas-peak baseline.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    cluster: PathBuf,
    /// Resource-graph JSON files; each file stem names a workload.
    #[arg(long, num_args = 1.., required = true)]
    workload: Vec<PathBuf>,
    #[arg(long, num_args = 1.., value_delimiter = ',', default_value = "adaptive,faas-peak")]
    policy: Vec<String>,
    /// Inclusive range `a..b`, a list `a,b,c`, or one seed.
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Crash a component at a simulated time, `comp@seconds`.
    #[arg(long = "fail-inject")]
    fail_inject: Vec<String>,
    /// CSV trace (app,arrival_s,scale) instead of generated arrivals.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    invocations: usize,
    /// Input-size distribution for generated arrivals.
    #[arg(long, default_value = "stable")]
    dist: String,
    /// Mean gap between generated arrivals, seconds.
    #[arg(long, default_value_t = 1.0)]
    interarrival: f64,
    /// Invocations replayed before measuring, to build history.
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    /// JSON simulation settings (cost, scheduler, sizing, autoscale).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Check accounting invariants after every event.
    #[arg(long)]
    check_invariants: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true)]
    summaries: Vec<PathBuf>,
    /// Directory for savings.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn init_logging() {
    let level = std::env::var("RCSIM_LOG").unwrap_or_else(|_| "off".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();
}

fn matrix(a: &RunArgs) -> Result<Matrix> {
    let cluster = load_cluster(&a.cluster)?;
    let apps = a
        .workload
        .iter()
        .map(|p| load_app(p))
        .collect::<Result<Vec<_>, _>>()?;
    let policies = a
        .policy
        .iter()
        .map(|p| p.parse::<Policy>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    let failures = a
        .fail_inject
        .iter()
        .map(|f| f.parse::<FailureSpec>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    let arrivals = match &a.trace {
        Some(p) => Arrivals::Trace(load_trace(p)?),
        None => Arrivals::Generated {
            invocations: a.invocations,
            dist: a.dist.parse::<DistKind>().map_err(anyhow::Error::msg)?,
            mean_gap_s: a.interarrival,
        },
    };
    let mut base = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str::<SimConfig>(&text).with_context(|| p.display().to_string())?
        }
        None => SimConfig {
            cost: CostModel::for_link(cluster.link_gbps),
            ..SimConfig::default()
        },
    };
    base.check_invariants = a.check_invariants;
    base.record_events = true;
    if a.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let m = Matrix {
        cluster,
        apps,
        policies,
        seeds: parse_seeds(&a.seeds)?,
        arrivals,
        warmup: a.warmup,
        failures,
        base,
    };
    m.validate()?;
    Ok(m)
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let m = matrix(a)?;
    let results = m.run_all(a.jobs)?;
    let rows = write_outputs(&a.out, &results)?;
    println!("{} cells written to {}", rows.len(), a.out.display());
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let summaries = a
        .summaries
        .iter()
        .map(|p| read_summary(p))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = compare(&summaries)?;
    print!("{}", format_table(&rows));
    std::fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    write_savings(&a.out.join("savings.csv"), &rows)?;
    Ok(())
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Compare(a) => cmd_compare(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
