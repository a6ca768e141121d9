//! Direct timeline enumerations of shipped query definitions, written
//! without the engines' matching code.

use std::collections::BTreeSet;

use larstream::model::{Term, Time};
use larstream::stream::Stream;

type Key = (Term, Term);

fn window(tmin: Time, now: Time, past: u64) -> std::ops::RangeInclusive<Time> {
    tmin.max(now.saturating_sub(past))..=now
}

/// `(metric, value, sector)` readings of `predicate` at `t`.
fn readings(stream: &Stream, t: Time, predicate: &str) -> Vec<(Term, f64, Term)> {
    stream
        .facts_at(t)
        .and_then(|f| f.predicate(predicate))
        .map(|facts| {
            facts
                .iter()
                .filter(|a| a.args.len() == 3)
                .filter_map(|a| {
                    Some((
                        a.args[0].clone(),
                        a.args[1].as_number()?.value(),
                        a.args[2].clone(),
                    ))
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Metric/sector pairs with a reading at some `T` in the last 9 ticks and
/// a reading at `T + 1` in the last 8 for which `cmp(value, next)` holds.
fn trend(stream: &Stream, now: Time, predicate: &str, cmp: fn(f64, f64) -> bool) -> BTreeSet<Key> {
    let tmin = stream.tmin().unwrap();
    let mut out = BTreeSet::new();
    for t in window(tmin, now, 9) {
        if !window(tmin, now, 8).contains(&(t + 1)) {
            continue;
        }
        for (m, v, s) in readings(stream, t, predicate) {
            for (m2, v2, s2) in readings(stream, t + 1, predicate) {
                if m == m2 && s == s2 && cmp(v, v2) {
                    out.insert((m.clone(), s.clone()));
                }
            }
        }
    }
    out
}

/// Metric/sector pairs with a reading in `[lo, hi]` during the last 9 ticks.
fn level(stream: &Stream, now: Time, predicate: &str, lo: f64, hi: f64) -> BTreeSet<Key> {
    let tmin = stream.tmin().unwrap();
    window(tmin, now, 9)
        .flat_map(|t| readings(stream, t, predicate))
        .filter(|(_, v, _)| (lo..=hi).contains(v))
        .map(|(m, _, s)| (m, s))
        .collect()
}

/// Sectors satisfying the urban-area rule at every tick of the stream.
pub fn urban_sectors(stream: &Stream) -> Vec<(Time, BTreeSet<Term>)> {
    let tl = stream.timeline().unwrap();
    let per_tick: Vec<[BTreeSet<Key>; 4]> = tl
        .iter()
        .map(|t| {
            [
                trend(stream, t, "traffic", |a, b| a >= b),
                trend(stream, t, "pollution", |a, b| a <= b),
                level(stream, t, "pollution", 0.0, 15.0),
                level(stream, t, "traffic", 10.0, 11.0),
            ]
        })
        .collect();
    tl.iter()
        .map(|now| {
            let recent: Vec<&[BTreeSet<Key>; 4]> = window(tl.start, now, 9)
                .map(|t| &per_tick[(t - tl.start) as usize])
                .collect();
            let any = |i: usize| -> BTreeSet<Key> {
                recent.iter().flat_map(|d| d[i].iter().cloned()).collect()
            };
            let (inc, dec, poll_low, traff_low) = (any(0), any(1), any(2), any(3));
            let sectors = inc
                .iter()
                .filter(|(m, s)| {
                    dec.iter().any(|(m10, s10)| s10 == s && m10 != m)
                        && poll_low.iter().any(|(_, s2)| s2 == s)
                        && traff_low.iter().any(|(_, s4)| s4 == s)
                })
                .map(|(_, s)| s.clone())
                .collect();
            (now, sectors)
        })
        .collect()
}
