//! Per-predicate history kept by the incremental engine.

use std::collections::BTreeMap;

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};

use crate::model::{Atom, Term, Time};
use crate::stream::{Candidates, PredFacts};

/// Atoms last seen at a given time, indexed by argument value.
#[derive(Default, Debug)]
pub(crate) struct SeenIndex {
    last: HashMap<Atom, Time>,
    by_arg: HashMap<(usize, Term), HashSet<Atom>>,
}

impl SeenIndex {
    fn touch(&mut self, atom: &Atom, t: Time) -> Option<Time> {
        match self.last.get_mut(atom) {
            Some(seen) => {
                let old = *seen;
                *seen = old.max(t);
                Some(old)
            }
            None => {
                for (i, a) in atom.args.iter().enumerate() {
                    self.by_arg
                        .entry((i, a.clone()))
                        .or_default()
                        .insert(atom.clone());
                }
                self.last.insert(atom.clone(), t);
                None
            }
        }
    }

    fn remove(&mut self, atom: &Atom) {
        if self.last.remove(atom).is_some() {
            for (i, a) in atom.args.iter().enumerate() {
                let key = (i, a.clone());
                if let Some(set) = self.by_arg.get_mut(&key) {
                    set.remove(atom);
                    if set.is_empty() {
                        self.by_arg.remove(&key);
                    }
                }
            }
        }
    }

    pub fn get(&self, atom: &Atom) -> Option<Time> {
        self.last.get(atom).copied()
    }

    pub fn len(&self) -> usize {
        self.last.len()
    }

    /// Calls `f` with every remembered atom compatible with `bound`.
    pub fn for_each(&self, bound: &[(usize, &Term)], mut f: impl FnMut(&Atom, Time)) {
        let mut best: Option<&HashSet<Atom>> = None;
        for (pos, value) in bound {
            match self.by_arg.get(&(*pos, (*value).clone())) {
                None => return,
                Some(set) => {
                    if best.is_none_or(|b| set.len() < b.len()) {
                        best = Some(set);
                    }
                }
            }
        }
        match best {
            Some(set) => {
                for a in set {
                    f(a, self.last[a]);
                }
            }
            None => {
                for (a, t) in &self.last {
                    f(a, *t);
                }
            }
        }
    }
}

/// History of one predicate: recent time slices, the last time each atom was
/// seen, and (when some rule boxes it) the start of each atom's current run.
#[derive(Debug)]
pub(crate) struct PredStore {
    /// Slices older than `now - retention` are dropped; `None` keeps all.
    retention: Option<u64>,
    track_runs: bool,
    slices: BTreeMap<Time, PredFacts>,
    pub seen: SeenIndex,
    runs: HashMap<Atom, Time>,
    prev_runs: HashMap<Atom, Time>,
    /// Atoms whose last-seen time moved to `now` this tick, with the old value.
    pub entered: Vec<(Atom, Option<Time>)>,
    /// A new atom was inserted at a time before `now` during this tick.
    pub past_touched: bool,
    /// Any atom was inserted this tick.
    pub touched: bool,
    now: Time,
    floor: Time,
}

static EMPTY: std::sync::OnceLock<PredFacts> = std::sync::OnceLock::new();

impl PredStore {
    pub fn new(retention: Option<u64>, track_runs: bool) -> Self {
        PredStore {
            retention,
            track_runs,
            slices: BTreeMap::new(),
            seen: SeenIndex::default(),
            runs: HashMap::default(),
            prev_runs: HashMap::default(),
            entered: Vec::new(),
            past_touched: false,
            touched: false,
            now: 0,
            floor: 0,
        }
    }

    /// Advances to `now`; `tmin` is the first tick of the stream.
    pub fn begin_tick(&mut self, now: Time, tmin: Time) {
        self.now = now;
        self.floor = match self.retention {
            Some(r) => tmin.max(now.saturating_sub(r)),
            None => tmin,
        };
        while let Some(entry) = self.slices.first_entry() {
            if *entry.key() >= self.floor {
                break;
            }
            let (t, facts) = entry.remove_entry();
            for a in facts.iter() {
                if self.seen.get(a) == Some(t) {
                    self.seen.remove(a);
                }
            }
        }
        self.entered.clear();
        self.past_touched = false;
        self.touched = false;
        if self.track_runs {
            self.prev_runs = std::mem::take(&mut self.runs);
        }
    }

    pub fn slice(&self, t: Time) -> &PredFacts {
        self.slices
            .get(&t)
            .unwrap_or_else(|| EMPTY.get_or_init(PredFacts::default))
    }

    pub fn candidates<'a>(&'a self, t: Time, bound: &[(usize, &Term)]) -> Candidates<'a> {
        match self.slices.get(&t) {
            Some(f) => f.candidates(bound),
            None => Candidates::Empty,
        }
    }

    pub fn contains(&self, t: Time, atom: &Atom) -> bool {
        self.slices.get(&t).is_some_and(|f| f.contains(atom))
    }

    pub fn run_start(&self, atom: &Atom) -> Option<Time> {
        self.runs.get(atom).copied()
    }

    fn scan_run(&self, atom: &Atom) -> Time {
        let mut t = self.now;
        while t > self.floor && self.contains(t - 1, atom) {
            t -= 1;
        }
        t
    }

    /// Inserts `atom` at `t <= now`; returns whether it was new.
    pub fn insert(&mut self, t: Time, atom: Atom) -> bool {
        if t < self.floor {
            return false;
        }
        if !self.slices.entry(t).or_default().insert(atom.clone()) {
            return false;
        }
        self.touched = true;
        let old = self.seen.touch(&atom, t);
        if t == self.now {
            self.entered.push((atom.clone(), old));
            if self.track_runs {
                let start = if self.now > self.floor && self.contains(self.now - 1, &atom) {
                    match self.prev_runs.get(&atom) {
                        Some(&s) if !self.past_touched => s,
                        _ => self.scan_run(&atom),
                    }
                } else {
                    self.now
                };
                self.runs.insert(atom, start);
            }
        } else {
            self.past_touched = true;
            if self.track_runs && self.runs.contains_key(&atom) {
                let start = self.scan_run(&atom);
                self.runs.insert(atom, start);
            }
        }
        true
    }

    pub fn footprint(&self) -> usize {
        self.slices.values().map(PredFacts::len).sum::<usize>()
            + self.seen.len()
            + self.runs.len()
            + self.prev_runs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(x: f64) -> Atom {
        Atom::new("p", vec![Term::num(x)])
    }

    #[test]
    fn pruning_forgets_old_slices_and_stale_atoms() {
        let mut s = PredStore::new(Some(2), false);
        s.begin_tick(0, 0);
        s.insert(0, a(1.0));
        for now in 1..=3 {
            s.begin_tick(now, 0);
        }
        assert!(s.slice(0).is_empty());
        assert_eq!(s.seen.get(&a(1.0)), None);
    }

    #[test]
    fn runs_track_consecutive_presence() {
        let mut s = PredStore::new(Some(5), true);
        for now in 0..4 {
            s.begin_tick(now, 0);
            if now != 1 {
                s.insert(now, a(1.0));
            }
        }
        assert_eq!(s.run_start(&a(1.0)), Some(2));
        // filling the gap in the past extends the run
        s.insert(1, a(1.0));
        assert_eq!(s.run_start(&a(1.0)), Some(0));
        assert!(s.past_touched);
    }

    #[test]
    fn insertions_below_the_floor_are_ignored() {
        let mut s = PredStore::new(Some(1), false);
        s.begin_tick(5, 0);
        assert!(!s.insert(3, a(1.0)));
        assert!(s.insert(4, a(1.0)));
        assert_eq!(s.seen.get(&a(1.0)), Some(4));
    }
}
