//! Resolving command-line arguments into a program and an input stream.

use anyhow::{bail, Context, Result};

use larstream::io::{
    generate_synthetic, load_background, load_csv, load_sensor_table, read_stream_file,
    LoadOptions, SyntheticConfig,
};
use larstream::model::{Program, Symbol};
use larstream::query::{load_program, Query};
use larstream::stream::Stream;

use crate::{QueryArgs, StreamArgs};

/// A program ready to run, with its configuration when it came from one.
pub struct Resolved {
    pub name: String,
    pub program: Program,
    pub outputs: Vec<Symbol>,
    pub query: Option<Query>,
}

pub fn resolve_query(args: &QueryArgs) -> Result<Resolved> {
    let (name, mut program, outputs, query) = match (&args.query, &args.program) {
        (Some(path), _) => {
            let q = Query::load(path)?;
            (
                q.config.name.clone(),
                q.program.clone(),
                q.outputs(),
                Some(q),
            )
        }
        (None, Some(path)) => {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "program".into());
            (name, load_program(path)?, Vec::new(), None)
        }
        (None, None) => bail!("give a query configuration (--query) or a program (--program)"),
    };
    for bg in &args.background {
        program.merge(&load_background(bg)?)?;
    }
    let outputs = if args.outputs.is_empty() {
        outputs
    } else {
        args.outputs
            .iter()
            .map(|s| Symbol::from(s.as_str()))
            .collect()
    };
    if outputs.is_empty() {
        bail!("no output predicates: pass --outputs or use a query configuration");
    }
    let derived = program.derived_predicates();
    for o in &outputs {
        if !derived.contains(o) {
            log::warn!("output predicate `{o}` is never derived by the program");
        }
    }
    Ok(Resolved {
        name,
        program,
        outputs,
        query,
    })
}

/// The synthetic configuration named on the command line or in the query,
/// with seed and length overrides applied.
pub fn synthetic_config(args: &StreamArgs, query: Option<&Query>) -> Result<SyntheticConfig> {
    let mut cfg = match (&args.synthetic, query) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SyntheticConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(q)) => q.config.synthetic.clone(),
        (None, None) => {
            bail!("no input stream: pass --stream, --csv with --sensors, or --synthetic")
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(ticks) = args.ticks {
        cfg.ticks = ticks;
    }
    Ok(cfg)
}

pub fn load_stream(args: &StreamArgs, query: Option<&Query>) -> Result<Stream> {
    if let Some(path) = &args.stream {
        return Ok(read_stream_file(path)?);
    }
    if !args.csv.is_empty() {
        let sensors = args.sensors.as_ref().expect("clap enforces --sensors");
        let table = load_sensor_table(sensors, args.sectors)?;
        let opts = LoadOptions {
            tick_minutes: args.tick_minutes,
            typed_pollution: args.typed_pollution,
            measure_columns: args.measures.clone(),
            ..LoadOptions::default()
        };
        let (stream, report) = load_csv(&args.csv, &table, &opts)?;
        log::info!(
            "ingested {} rows into {} facts over {} ticks",
            report.rows_accepted,
            report.facts,
            stream.len()
        );
        return Ok(stream);
    }
    Ok(generate_synthetic(&synthetic_config(args, query)?))
}
