//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use larstream::dataset::{build_dataset, export_dataset, FeatureSchema, Format, LabelSpec};
use larstream::io::{generate_synthetic, write_stream};
use larstream::model::{Atom, Time};
use larstream::query::{Query, TaskName};
use larstream::runner::{self, check_all, Engine, RunError};
use larstream::stream::Stream;

use crate::source::{load_stream, resolve_query, synthetic_config};
use crate::{EngineMismatch, QueryArgs, StreamArgs};

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn lift(e: RunError) -> anyhow::Error {
    match e {
        RunError::Mismatch(m) => EngineMismatch(m.to_string()).into(),
        RunError::Eval(e) => e.into(),
    }
}

pub fn run(q: &QueryArgs, s: &StreamArgs, engine: Engine, report: Option<&Path>) -> Result<()> {
    let r = resolve_query(q)?;
    let stream = load_stream(s, r.query.as_ref())?;
    let mut out = output(report)?;
    let mut io_err = None;
    let result = runner::run(&r.program, &stream, &r.outputs, engine, |tick| {
        if io_err.is_none() {
            let line = serde_json::to_string(&tick).expect("reports serialize");
            if let Err(e) = writeln!(out, "{line}") {
                io_err = Some(e);
            }
        }
    });
    // flush what was computed even when the engines disagree
    out.flush()?;
    if let Some(e) = io_err {
        return Err(e).context("writing the report");
    }
    result.map_err(lift)
}

pub fn bench(q: &QueryArgs, s: &StreamArgs, warmup: u64, report: Option<&Path>) -> Result<()> {
    let r = resolve_query(q)?;
    let stream = load_stream(s, r.query.as_ref())?;
    let rep = runner::bench(&r.name, &r.program, &stream, warmup)?;
    let mut out = output(report)?;
    serde_json::to_writer_pretty(&mut out, &rep)?;
    writeln!(out)?;
    out.flush()?;
    if report.is_some() {
        match rep.speedup {
            Some(x) => eprintln!(
                "{}: {} ticks, naive {:.1} us/tick, incremental {:.1} us/tick, speedup {x:.2}x",
                rep.query, rep.ticks, rep.naive.latency.mean_us, rep.incremental.latency.mean_us
            ),
            None => eprintln!("{}: no measured ticks", rep.query),
        }
    }
    Ok(())
}

pub struct ExportOptions {
    pub out: PathBuf,
    pub format: Format,
    pub engine: Engine,
    pub window: Option<usize>,
    pub task: Option<TaskName>,
    pub train_frac: Option<f64>,
    pub val_frac: Option<f64>,
}

pub fn export(q: &QueryArgs, s: &StreamArgs, opts: &ExportOptions) -> Result<()> {
    let r = resolve_query(q)?;
    let Some(query) = &r.query else {
        bail!("export needs a query configuration (--query) for its task and features");
    };
    let stream = load_stream(s, Some(query))?;
    let mut task = query.config.task.clone();
    if let Some(w) = opts.window {
        task.window = w;
    }
    if let Some(kind) = opts.task {
        if kind != task.kind {
            log::warn!(
                "task {kind:?} differs from the query's {:?}; labels follow the {kind:?} rules",
                task.kind
            );
            if matches!(kind, TaskName::Multilabel | TaskName::Multiclass)
                && task.universe.is_empty()
            {
                bail!("a {kind:?} task needs a universe in the query configuration");
            }
            if kind == TaskName::Multiclass && task.classes.is_empty() {
                bail!("a multiclass task needs classes in the query configuration");
            }
        }
        task.kind = kind;
    }
    if task.window == 0 {
        bail!("--window must be at least 1");
    }
    task.train_frac = opts.train_frac.unwrap_or(task.train_frac);
    task.val_frac = opts.val_frac.unwrap_or(task.val_frac);

    let mut answers: Vec<(Time, BTreeSet<Atom>)> = Vec::new();
    runner::run(&r.program, &stream, &r.outputs, opts.engine, |tick| {
        answers.push((tick.t, tick.answers.into_iter().collect()));
    })
    .map_err(lift)?;

    let schema = FeatureSchema::discover(&stream, &query.config.features, task.window);
    if schema.width() == 0 {
        log::warn!("no stream fact matches the feature specification; rows are empty");
    }
    let labels = LabelSpec::from_config(&task);
    let dataset = build_dataset(
        &r.name,
        &stream,
        &answers,
        schema,
        labels,
        task.train_frac,
        task.val_frac,
    )?;
    export_dataset(&dataset, &opts.out, opts.format)?;
    let m = &dataset.meta;
    let histogram: Vec<String> = m
        .label_histogram
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect();
    println!(
        "{} samples (train {}, val {}, test {}), w={} n={}; labels {{{}}}",
        m.samples,
        m.splits.train,
        m.splits.val,
        m.splits.test,
        m.window,
        m.n,
        histogram.join(", ")
    );
    Ok(())
}

pub struct CheckOptions {
    pub queries: Vec<PathBuf>,
    pub queries_dir: PathBuf,
    pub streams: u64,
    pub ticks: u64,
    pub sectors: u32,
    pub sensors_per_sector: u32,
    pub seed: u64,
    pub report: Option<PathBuf>,
}

/// Seeded streams for one query, shaped by its synthetic configuration.
pub fn check_streams(query: &Query, opts: &CheckOptions) -> Vec<Stream> {
    let seeds: Vec<u64> = (0..opts.streams).map(|i| opts.seed + i).collect();
    larstream::par::map(&seeds, |&seed| {
        let mut cfg = query.config.synthetic.clone();
        cfg.seed = seed;
        cfg.ticks = opts.ticks;
        cfg.sectors = opts.sectors;
        cfg.sensors_per_sector = opts.sensors_per_sector;
        generate_synthetic(&cfg)
    })
}

pub fn check(opts: &CheckOptions) -> Result<()> {
    let paths = if opts.queries.is_empty() {
        (1..=5)
            .map(|i| opts.queries_dir.join(format!("q{i}.toml")))
            .collect()
    } else {
        opts.queries.clone()
    };
    let mut work = Vec::new();
    for p in &paths {
        let q = Query::load(p)?;
        let streams = check_streams(&q, opts);
        work.push((q.config.name.clone(), q.program.clone(), streams));
    }
    let start = std::time::Instant::now();
    let report = check_all(&work);
    let elapsed = start.elapsed();
    if let Some(path) = &opts.report {
        let mut out = output(Some(path))?;
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
        out.flush()?;
    }
    println!(
        "checked {} query/stream pairs ({} ticks) in {:.1}s: {} mismatches, {} errors",
        report.pairs,
        report.ticks,
        elapsed.as_secs_f64(),
        report.mismatches,
        report.errors
    );
    if let Some(f) = report.failures.first() {
        let detail = match (&f.mismatch, &f.error) {
            (Some(m), _) => m.to_string(),
            (None, Some(e)) => e.clone(),
            (None, None) => String::new(),
        };
        eprintln!(
            "first failure: {} stream {} (seed {}): {detail}",
            f.query,
            f.stream,
            opts.seed + f.stream as u64
        );
    }
    if report.mismatches > 0 {
        return Err(
            EngineMismatch(format!("{} query/stream pairs disagree", report.mismatches)).into(),
        );
    }
    if report.errors > 0 {
        bail!("{} query/stream pairs failed to evaluate", report.errors);
    }
    Ok(())
}

pub fn gen(q: &QueryArgs, s: &StreamArgs, out: Option<&Path>) -> Result<()> {
    let query = match &q.query {
        Some(p) => Some(Query::load(p)?),
        None => None,
    };
    let cfg = synthetic_config(s, query.as_ref())?;
    let stream = generate_synthetic(&cfg);
    let mut w = output(out)?;
    write_stream(&stream, &mut w)?;
    w.flush()?;
    Ok(())
}
