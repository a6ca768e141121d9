//! The stream data model: a closed timeline of time points, each mapped to a
//! set of ground atoms.

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap as HashMap;
use std::fmt;

use indexmap::IndexSet;
use thiserror::Error;

use crate::model::{Atom, Symbol, Term, Time};

/// Closed interval of time points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    pub start: Time,
    pub end: Time,
}

impl Interval {
    pub fn new(start: Time, end: Time) -> Self {
        debug_assert!(start <= end);
        Interval { start, end }
    }

    pub fn contains(&self, t: Time) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = Time> {
        self.start..=self.end
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("atom `{0}` is not ground")]
    NonGround(Atom),
    #[error("time point {t} lies outside the timeline {timeline}")]
    OutOfTimeline { t: Time, timeline: String },
    #[error("invalid timeline [{0}, {1}]")]
    InvalidTimeline(Time, Time),
}

/// Ground atoms of one predicate, indexed by argument value.
#[derive(Clone, Debug, Default)]
pub struct PredFacts {
    atoms: IndexSet<Atom>,
    by_arg: HashMap<(usize, Term), Vec<usize>>,
}

impl PredFacts {
    pub fn insert(&mut self, atom: Atom) -> bool {
        let (idx, fresh) = self.atoms.insert_full(atom);
        if fresh {
            for (pos, arg) in self.atoms[idx].args.iter().enumerate() {
                self.by_arg.entry((pos, arg.clone())).or_default().push(idx);
            }
        }
        fresh
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.atoms.contains(atom)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter()
    }

    /// Atoms compatible with the given bound argument positions. The result
    /// is a superset of the matches; callers still unify each candidate.
    pub fn candidates<'a>(&'a self, bound: &[(usize, &Term)]) -> Candidates<'a> {
        let mut best: Option<&'a Vec<usize>> = None;
        for (pos, value) in bound {
            // the key is owned; a miss means nothing can match
            match self.by_arg.get(&(*pos, (*value).clone())) {
                None => return Candidates::Empty,
                Some(list) => {
                    if best.is_none_or(|b| list.len() < b.len()) {
                        best = Some(list);
                    }
                }
            }
        }
        match best {
            Some(list) => Candidates::Indexed(&self.atoms, list.iter()),
            None => Candidates::All(self.atoms.iter()),
        }
    }
}

pub enum Candidates<'a> {
    Empty,
    All(indexmap::set::Iter<'a, Atom>),
    Indexed(&'a IndexSet<Atom>, std::slice::Iter<'a, usize>),
}

impl<'a> Iterator for Candidates<'a> {
    type Item = &'a Atom;

    fn next(&mut self) -> Option<&'a Atom> {
        match self {
            Candidates::Empty => None,
            Candidates::All(it) => it.next(),
            Candidates::Indexed(set, it) => it.next().map(|&i| &set[i]),
        }
    }
}

/// All atoms true at one time point, grouped by predicate.
#[derive(Clone, Debug, Default)]
pub struct FactSet {
    preds: HashMap<Symbol, PredFacts>,
    len: usize,
}

impl FactSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a ground atom; returns `false` if it was already present.
    pub fn insert(&mut self, atom: Atom) -> bool {
        debug_assert!(atom.is_ground());
        let fresh = self
            .preds
            .entry(atom.predicate.clone())
            .or_default()
            .insert(atom);
        self.len += fresh as usize;
        fresh
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.preds
            .get(&atom.predicate)
            .is_some_and(|p| p.contains(atom))
    }

    pub fn predicate(&self, predicate: &str) -> Option<&PredFacts> {
        self.preds.get(predicate)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Atom> {
        self.preds.values().flat_map(|p| p.iter())
    }

    /// Atoms in canonical (sorted) order.
    pub fn sorted(&self) -> Vec<&Atom> {
        let mut atoms: Vec<&Atom> = self.iter().collect();
        atoms.sort();
        atoms
    }

    pub fn to_set(&self) -> BTreeSet<Atom> {
        self.iter().cloned().collect()
    }
}

impl PartialEq for FactSet {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.iter().all(|a| other.contains(a))
    }
}

impl Eq for FactSet {}

impl FromIterator<Atom> for FactSet {
    fn from_iter<I: IntoIterator<Item = Atom>>(iter: I) -> Self {
        let mut set = FactSet::new();
        for atom in iter {
            set.insert(atom);
        }
        set
    }
}

/// `S = <T, v>`: a timeline and the atoms true at each of its time points.
#[derive(Clone, Debug, Default)]
pub struct Stream {
    timeline: Option<Interval>,
    v: BTreeMap<Time, FactSet>,
}

impl Stream {
    /// A stream spanning zero ticks.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_timeline(tmin: Time, tmax: Time) -> Result<Self, StreamError> {
        if tmin > tmax {
            return Err(StreamError::InvalidTimeline(tmin, tmax));
        }
        Ok(Stream {
            timeline: Some(Interval::new(tmin, tmax)),
            v: BTreeMap::new(),
        })
    }

    pub fn timeline(&self) -> Option<Interval> {
        self.timeline
    }

    pub fn tmin(&self) -> Option<Time> {
        self.timeline.map(|i| i.start)
    }

    pub fn tmax(&self) -> Option<Time> {
        self.timeline.map(|i| i.end)
    }

    /// Number of time points in the timeline.
    pub fn len(&self) -> u64 {
        self.timeline.map_or(0, |i| i.len())
    }

    pub fn is_empty(&self) -> bool {
        self.timeline.is_none()
    }

    /// Grows the timeline so that it covers `t`.
    pub fn extend_to(&mut self, t: Time) {
        self.timeline = Some(match self.timeline {
            None => Interval::new(t, t),
            Some(i) => Interval::new(i.start.min(t), i.end.max(t)),
        });
    }

    /// Inserts a ground atom at `t`, which must lie inside the timeline.
    pub fn insert(&mut self, t: Time, atom: Atom) -> Result<bool, StreamError> {
        if !atom.is_ground() {
            return Err(StreamError::NonGround(atom));
        }
        match self.timeline {
            Some(i) if i.contains(t) => Ok(self.v.entry(t).or_default().insert(atom)),
            other => Err(StreamError::OutOfTimeline {
                t,
                timeline: other.map_or_else(|| "(empty)".to_string(), |i| i.to_string()),
            }),
        }
    }

    pub fn facts_at(&self, t: Time) -> Option<&FactSet> {
        self.v.get(&t)
    }

    pub fn contains(&self, t: Time, atom: &Atom) -> bool {
        self.v.get(&t).is_some_and(|f| f.contains(atom))
    }

    /// Time points that carry at least one atom, in order.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = (Time, &FactSet)> {
        self.v.iter().map(|(t, f)| (*t, f))
    }

    /// Atoms at `t` as an owned set (empty if none).
    pub fn atoms_at(&self, t: Time) -> BTreeSet<Atom> {
        self.v.get(&t).map(FactSet::to_set).unwrap_or_default()
    }

    pub fn fact_count(&self) -> usize {
        self.v.values().map(FactSet::len).sum()
    }

    /// The sub-stream restricted to `[start, end]` (clipped to the timeline).
    pub fn restrict(&self, start: Time, end: Time) -> Stream {
        let Some(i) = self.timeline else {
            return Stream::empty();
        };
        let (lo, hi) = (start.max(i.start), end.min(i.end));
        if lo > hi {
            return Stream::empty();
        }
        Stream {
            timeline: Some(Interval::new(lo, hi)),
            v: self
                .v
                .range(lo..=hi)
                .map(|(t, f)| (*t, f.clone()))
                .collect(),
        }
    }
}

impl PartialEq for Stream {
    fn eq(&self, other: &Self) -> bool {
        if self.timeline != other.timeline {
            return false;
        }
        let non_empty = |s: &Stream| -> Vec<Time> {
            s.v.iter()
                .filter(|(_, f)| !f.is_empty())
                .map(|(t, _)| *t)
                .collect()
        };
        let times = non_empty(self);
        times == non_empty(other) && times.iter().all(|t| self.v[t] == other.v[t])
    }
}

impl Eq for Stream {}
