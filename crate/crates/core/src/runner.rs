//! Driving the engines over streams: per-tick answers, engine cross-checks
//! and latency benchmarks.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::incremental::IncrementalEngine;
use crate::model::{Atom, Program, Symbol, Time};
use crate::naive::{EvalError, NaiveSession, TickResult};
use crate::stream::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Naive,
    Incremental,
    /// Both engines in lockstep, failing on the first disagreement.
    Both,
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "naive" => Ok(Engine::Naive),
            "incremental" => Ok(Engine::Incremental),
            "both" => Ok(Engine::Both),
            other => Err(format!("unknown engine `{other}`")),
        }
    }
}

/// Derived atoms on which the engines disagree at one tick.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub t: Time,
    pub only_naive: Vec<Atom>,
    pub only_incremental: Vec<Atom>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "engines disagree at tick {}", self.t)?;
        for a in &self.only_naive {
            writeln!(f, "  - {a}    (naive only)")?;
        }
        for a in &self.only_incremental {
            writeln!(f, "  + {a}    (incremental only)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Mismatch(Box<Mismatch>),
}

fn all_derived(r: &TickResult) -> BTreeSet<&Atom> {
    r.derived.values().flatten().collect()
}

fn diff(t: Time, naive: &TickResult, inc: &TickResult) -> Option<Mismatch> {
    let (a, b) = (all_derived(naive), all_derived(inc));
    if a == b {
        return None;
    }
    Some(Mismatch {
        t,
        only_naive: a.difference(&b).map(|x| (*x).clone()).collect(),
        only_incremental: b.difference(&a).map(|x| (*x).clone()).collect(),
    })
}

/// One tick of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TickReport {
    pub t: Time,
    pub answers: Vec<Atom>,
    /// Evaluation time of the tick; under [`Engine::Both`], the incremental
    /// engine's.
    pub latency_us: f64,
}

fn facts_at(stream: &Stream, t: Time) -> impl Iterator<Item = Atom> + '_ {
    stream
        .facts_at(t)
        .into_iter()
        .flat_map(|f| f.iter().cloned())
}

fn micros(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e6
}

/// Evaluates every tick of `stream`, handing each tick's answers on
/// `outputs` to `sink` as soon as it is computed.
pub fn run(
    program: &Program,
    stream: &Stream,
    outputs: &[Symbol],
    engine: Engine,
    mut sink: impl FnMut(TickReport),
) -> Result<(), RunError> {
    let mut naive = match engine {
        Engine::Incremental => None,
        _ => Some(NaiveSession::new(program, stream)?),
    };
    let mut inc = match engine {
        Engine::Naive => None,
        _ => Some(IncrementalEngine::new(program)?),
    };
    let Some(tl) = stream.timeline() else {
        return Ok(());
    };
    for t in tl.iter() {
        let naive_result = match &mut naive {
            Some(session) => {
                let start = Instant::now();
                let r = session.step().expect("tick within timeline")?;
                Some((r, micros(start)))
            }
            None => None,
        };
        let inc_result = match &mut inc {
            Some(engine) => {
                let start = Instant::now();
                let r = engine.push_tick(t, facts_at(stream, t))?;
                Some((r, micros(start)))
            }
            None => None,
        };
        let (result, latency_us) = match (naive_result, inc_result) {
            (Some((n, _)), Some((i, lat))) => {
                if let Some(m) = diff(t, &n, &i) {
                    return Err(RunError::Mismatch(Box::new(m)));
                }
                (i, lat)
            }
            (Some(r), None) | (None, Some(r)) => r,
            (None, None) => unreachable!("some engine runs"),
        };
        sink(TickReport {
            t,
            answers: result.answers(outputs).into_iter().collect(),
            latency_us,
        });
    }
    Ok(())
}

/// Runs both engines over `stream` and returns the first disagreement on
/// any derived atom, if there is one.
pub fn check_equivalence(
    program: &Program,
    stream: &Stream,
) -> Result<Option<Mismatch>, EvalError> {
    match run(program, stream, &[], Engine::Both, |_| {}) {
        Ok(()) => Ok(None),
        Err(RunError::Mismatch(m)) => Ok(Some(*m)),
        Err(RunError::Eval(e)) => Err(e),
    }
}

/// Outcome of checking one program against one stream.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub query: String,
    pub stream: usize,
    pub ticks: u64,
    pub mismatch: Option<Mismatch>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CheckReport {
    pub pairs: usize,
    pub ticks: u64,
    pub mismatches: usize,
    pub errors: usize,
    /// Failing pairs only.
    pub failures: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0 && self.errors == 0
    }
}

/// Cross-checks every program against every stream of its own, in parallel
/// over the pairs.
pub fn check_all(programs: &[(String, Program, Vec<Stream>)]) -> CheckReport {
    let pairs: Vec<(usize, usize)> = programs
        .iter()
        .enumerate()
        .flat_map(|(q, (_, _, streams))| (0..streams.len()).map(move |s| (q, s)))
        .collect();
    let outcomes = crate::par::map(&pairs, |&(q, s)| {
        let (name, program, streams) = &programs[q];
        let stream = &streams[s];
        let (mismatch, error) = match check_equivalence(program, stream) {
            Ok(m) => (m, None),
            Err(e) => (None, Some(e.to_string())),
        };
        CheckOutcome {
            query: name.clone(),
            stream: s,
            ticks: stream.len(),
            mismatch,
            error,
        }
    });
    let mut report = CheckReport {
        pairs: outcomes.len(),
        ..Default::default()
    };
    for o in outcomes {
        report.ticks += o.ticks;
        report.mismatches += o.mismatch.is_some() as usize;
        report.errors += o.error.is_some() as usize;
        if o.mismatch.is_some() || o.error.is_some() {
            report.failures.push(o);
        }
    }
    report
}

/// Per-tick latency summary in microseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub ticks: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        };
        // nearest-rank percentile
        let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
        LatencyStats {
            ticks: n,
            mean_us: v.iter().sum::<f64>() / n as f64,
            median_us: median,
            p99_us: v[rank - 1],
            max_us: v[n - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineBench {
    pub latency: LatencyStats,
    /// Rule firings over the measured ticks.
    pub rule_firings: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub query: String,
    pub ticks: u64,
    pub warmup: u64,
    pub facts_per_tick: f64,
    pub parallel_build: bool,
    pub naive: EngineBench,
    pub incremental: EngineBench,
    /// Naive over incremental mean latency; absent without measured ticks.
    pub speedup: Option<f64>,
    /// Incremental over naive rule firings on the measured ticks.
    pub firing_ratio: Option<f64>,
}

/// Times every tick of both engines separately; the first `warmup` ticks
/// are evaluated but left out of the statistics.
pub fn bench(
    query: &str,
    program: &Program,
    stream: &Stream,
    warmup: u64,
) -> Result<BenchReport, EvalError> {
    let ticks: Vec<Time> = stream
        .timeline()
        .map(|tl| tl.iter().collect())
        .unwrap_or_default();
    let measured = |t: Time| stream.tmin().is_some_and(|lo| t >= lo + warmup);

    let mut session = NaiveSession::new(program, stream)?;
    let mut naive_lat = Vec::new();
    let mut naive_firings = 0;
    for &t in &ticks {
        let before = session.stats.rule_firings;
        let start = Instant::now();
        session.step().expect("tick within timeline")?;
        let lat = micros(start);
        if measured(t) {
            naive_lat.push(lat);
            naive_firings += session.stats.rule_firings - before;
        }
    }

    let mut engine = IncrementalEngine::new(program)?;
    let mut inc_lat = Vec::new();
    let mut inc_firings = 0;
    for &t in &ticks {
        let before = engine.stats().rule_firings;
        let facts: Vec<Atom> = facts_at(stream, t).collect();
        let start = Instant::now();
        engine.push_tick(t, facts)?;
        let lat = micros(start);
        if measured(t) {
            inc_lat.push(lat);
            inc_firings += engine.stats().rule_firings - before;
        }
    }

    let naive = EngineBench {
        latency: LatencyStats::from_samples(&naive_lat),
        rule_firings: naive_firings,
    };
    let incremental = EngineBench {
        latency: LatencyStats::from_samples(&inc_lat),
        rule_firings: inc_firings,
    };
    let speedup = (!inc_lat.is_empty() && incremental.latency.mean_us > 0.0)
        .then(|| naive.latency.mean_us / incremental.latency.mean_us);
    let firing_ratio = (naive_firings > 0).then(|| inc_firings as f64 / naive_firings as f64);
    Ok(BenchReport {
        query: query.to_string(),
        ticks: ticks.len() as u64,
        warmup,
        facts_per_tick: if ticks.is_empty() {
            0.0
        } else {
            stream.fact_count() as f64 / ticks.len() as f64
        },
        parallel_build: crate::par::enabled(),
        naive,
        incremental,
        speedup,
        firing_ratio,
    })
}
