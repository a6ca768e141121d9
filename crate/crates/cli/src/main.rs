//! `larstream`: run LARS queries over streams, compare the engines,
//! benchmark them and export labeled datasets.

mod commands;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use larstream::dataset::Format;
use larstream::query::TaskName;
use larstream::runner::Engine;

/// Exit status for a disagreement between the engines.
pub const EXIT_MISMATCH: u8 = 2;

/// Raised when the naive and incremental engines disagree.
#[derive(Debug)]
pub struct EngineMismatch(pub String);

impl std::fmt::Display for EngineMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for EngineMismatch {}

#[derive(Parser)]
#[command(
    name = "larstream",
    version,
    about = "Stream reasoning over Plain LARS programs"
)]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true, env = "LARSTREAM_THREADS")]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a program tick by tick and print the answers as NDJSON.
    Run(RunArgs),
    /// Measure per-tick latency of both engines.
    Bench(BenchArgs),
    /// Export a labeled dataset.
    Export(ExportArgs),
    /// Cross-check the engines on seeded random streams.
    Check(CheckArgs),
    /// Write a synthetic stream as NDJSON.
    Gen(GenArgs),
}

/// Which program to evaluate and which predicates to report.
#[derive(Args, Clone, Debug)]
pub struct QueryArgs {
    /// Query configuration (program, outputs, task, synthetic stream).
    #[arg(long, short = 'q')]
    pub query: Option<PathBuf>,
    /// Program file, instead of a query configuration.
    #[arg(long, conflicts_with = "query")]
    pub program: Option<PathBuf>,
    /// Background fact files merged into the program.
    #[arg(long)]
    pub background: Vec<PathBuf>,
    /// Output predicates, comma separated (defaults to the query's).
    #[arg(long, value_delimiter = ',')]
    pub outputs: Vec<String>,
}

/// Where the input stream comes from; without any of these, the query's
/// synthetic configuration is used.
#[derive(Args, Clone, Debug)]
pub struct StreamArgs {
    /// NDJSON stream file.
    #[arg(long, conflicts_with_all = ["csv", "synthetic"])]
    pub stream: Option<PathBuf>,
    /// CSV reading files (needs --sensors).
    #[arg(long, requires = "sensors", conflicts_with = "synthetic")]
    pub csv: Vec<PathBuf>,
    /// Sensor table CSV with id, kind, lat, lon and optionally sector.
    #[arg(long)]
    pub sensors: Option<PathBuf>,
    /// Group sensors into this many sectors by location.
    #[arg(long)]
    pub sectors: Option<u32>,
    #[arg(long, default_value_t = 5)]
    pub tick_minutes: u64,
    /// Measure columns of wide CSV files, comma separated; rows then carry
    /// one reading per listed column instead of a single `value`.
    #[arg(long, value_delimiter = ',')]
    pub measures: Vec<String>,
    /// Emit typed 4-ary pollution facts from CSV input.
    #[arg(long)]
    pub typed_pollution: bool,
    /// Synthetic stream configuration (TOML).
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Override the synthetic seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the synthetic stream length.
    #[arg(long)]
    pub ticks: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[command(flatten)]
    stream: StreamArgs,
    #[arg(long, default_value = "incremental")]
    engine: Engine,
    /// Write the NDJSON report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[command(flatten)]
    stream: StreamArgs,
    /// Leading ticks left out of the statistics.
    #[arg(long, default_value_t = 100)]
    warmup: u64,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[command(flatten)]
    stream: StreamArgs,
    /// Dataset file; metadata goes to `<out>.meta.json`.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value = "ndjson")]
    format: Format,
    /// Engine computing the labels; `both` also cross-checks them.
    #[arg(long, default_value = "incremental")]
    engine: Engine,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskName>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
}

#[derive(Args)]
struct CheckArgs {
    /// Query configurations (defaults to q1..q5 in --queries-dir).
    #[arg(long = "query", short = 'q')]
    queries: Vec<PathBuf>,
    #[arg(long, default_value = "queries")]
    queries_dir: PathBuf,
    /// Random streams per query.
    #[arg(long, default_value_t = 200)]
    streams: u64,
    #[arg(long, default_value_t = 50)]
    ticks: u64,
    #[arg(long, default_value_t = 10)]
    sectors: u32,
    #[arg(long, default_value_t = 3)]
    sensors_per_sector: u32,
    /// Seed of the first stream; stream i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here as well.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    query: QueryArgs,
    #[command(flatten)]
    stream: StreamArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<TaskName, String> {
    match s {
        "boolean" => Ok(TaskName::Boolean),
        "multilabel" => Ok(TaskName::Multilabel),
        "multiclass" => Ok(TaskName::Multiclass),
        "count" => Ok(TaskName::Count),
        other => Err(format!("unknown task `{other}`")),
    }
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("configuring {n} threads: {e}"))?;
    }
    #[cfg(not(feature = "parallel"))]
    if threads.is_some_and(|n| n > 1) {
        log::warn!("built without the `parallel` feature; running on one thread");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = init_threads(cli.threads).and_then(|()| match cli.command {
        Command::Run(a) => commands::run(&a.query, &a.stream, a.engine, a.report.as_deref()),
        Command::Bench(a) => commands::bench(&a.query, &a.stream, a.warmup, a.report.as_deref()),
        Command::Export(a) => commands::export(
            &a.query,
            &a.stream,
            &commands::ExportOptions {
                out: a.out,
                format: a.format,
                engine: a.engine,
                window: a.window,
                task: a.task,
                train_frac: a.train_frac,
                val_frac: a.val_frac,
            },
        ),
        Command::Check(a) => commands::check(&commands::CheckOptions {
            queries: a.queries,
            queries_dir: a.queries_dir,
            streams: a.streams,
            ticks: a.ticks,
            sectors: a.sectors,
            sensors_per_sector: a.sensors_per_sector,
            seed: a.seed,
            report: a.report,
        }),
        Command::Gen(a) => commands::gen(&a.query, &a.stream, a.out.as_deref()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(m) = e.downcast_ref::<EngineMismatch>() {
                eprintln!("error: {m}");
                return ExitCode::from(EXIT_MISMATCH);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
