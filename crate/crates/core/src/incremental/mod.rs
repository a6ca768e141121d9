//! Incremental evaluation.
//!
//! The engine keeps, per predicate, only the history its windows can still
//! observe. Each rule caches the head instances it produced at the previous
//! tick; a non-recursive rule whose body relations provably did not change is
//! not re-evaluated and its cached instances are re-emitted instead. Rules in
//! recursive components are always evaluated to a fixpoint.

mod plan;
mod store;

use std::collections::BTreeSet;

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};

use crate::model::{Atom, CompOp, Number, Program, Symbol, Term, Time};
use crate::naive::{arith, compare, validate_program, EvalError, TickResult};
use crate::stream::{Interval, Stream};
use crate::window::FactSource;

use plan::{CompiledRule, Plan, Slot, Step, TupleOp, View};
use store::PredStore;

/// Work counters, cumulative over all ticks pushed so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub ticks: u64,
    pub rule_firings: u64,
    pub rules_skipped: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum RawTime {
    Now,
    At(Term),
}

type Instances = Vec<(RawTime, Atom)>;

/// Visible atoms of one tuple window at the current tick.
struct TupleView {
    timeline: Interval,
    visible: Stream,
}

pub struct IncrementalEngine {
    plan: Plan,
    pred_ids: HashMap<Symbol, usize>,
    stores: Vec<PredStore>,
    cache: Vec<Option<Instances>>,
    box_cache: HashMap<(usize, u64), HashSet<Atom>>,
    ring: std::collections::VecDeque<(Time, Atom)>,
    inputs_seen: u64,
    tuple_views: HashMap<u64, TupleView>,
    tmin: Option<Time>,
    now: Option<Time>,
    history_span: Option<u64>,
    stats: EngineStats,
}

impl IncrementalEngine {
    pub fn new(program: &Program) -> Result<Self, EvalError> {
        validate_program(program)?;
        let plan = plan::compile(program);
        let mut retention: Vec<Option<u64>> = vec![Some(1); plan.preds.len()];
        let mut runs = vec![false; plan.preds.len()];
        let mut box_cache = HashMap::default();
        for rule in &plan.rules {
            for &(pred, view) in &rule.formulas {
                retention[pred] = match (retention[pred], view.retention()) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    _ => None,
                };
                if let View::Box(p) = view {
                    runs[pred] = true;
                    box_cache.insert((pred, p), HashSet::default());
                }
            }
        }
        let stores = retention
            .into_iter()
            .zip(runs)
            .map(|(r, b)| PredStore::new(r, b))
            .collect();
        let history_span = if plan
            .rules
            .iter()
            .any(|r| r.formulas.iter().any(|f| f.1 == View::AtAll))
        {
            None
        } else {
            Some(program.max_time_window())
        };
        Ok(IncrementalEngine {
            cache: vec![None; plan.rules.len()],
            pred_ids: plan
                .preds
                .iter()
                .cloned()
                .enumerate()
                .map(|(i, p)| (p, i))
                .collect(),
            plan,
            stores,
            box_cache,
            ring: Default::default(),
            inputs_seen: 0,
            tuple_views: HashMap::default(),
            tmin: None,
            now: None,
            history_span,
            stats: EngineStats::default(),
        })
    }

    /// How many past time points the engine retains, or `None` when some
    /// unwindowed `@` needs the whole history.
    pub fn ring_len(&self) -> Option<u64> {
        self.history_span
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn now(&self) -> Option<Time> {
        self.now
    }

    /// Number of stored atoms and annotations, a proxy for memory use.
    pub fn footprint(&self) -> usize {
        self.stores.iter().map(PredStore::footprint).sum::<usize>()
            + self.ring.len()
            + self.cache.iter().flatten().map(Vec::len).sum::<usize>()
    }

    /// Last tick at which `atom` held, if still within the retained history.
    pub fn last_seen(&self, atom: &Atom) -> Option<Time> {
        self.stores[self.pred_index(&atom.predicate)?]
            .seen
            .get(atom)
    }

    /// Last tick at which `atom` is still visible through a window of size
    /// `past`, if that tick has not already gone by.
    pub fn horizon(&self, atom: &Atom, past: u64) -> Option<Time> {
        let h = self.last_seen(atom)? + past;
        (h >= self.now?).then_some(h)
    }

    /// Evaluates tick `t` given the input atoms that arrive at `t`. Ticks
    /// must be consecutive.
    pub fn push_tick<I>(&mut self, t: Time, facts: I) -> Result<TickResult, EvalError>
    where
        I: IntoIterator<Item = Atom>,
    {
        if let Some(last) = self.now {
            if t != last + 1 {
                return Err(EvalError::OutOfOrder { got: t, last });
            }
        }
        let mut inputs: Vec<Atom> = Vec::new();
        for atom in facts {
            if !atom.is_ground() {
                return Err(EvalError::NonGroundInput(atom));
            }
            inputs.push(atom);
        }
        inputs.sort();
        inputs.dedup();

        let first = self.now.is_none();
        let tmin = *self.tmin.get_or_insert(t);
        self.now = Some(t);
        self.stats.ticks += 1;
        for s in &mut self.stores {
            s.begin_tick(t, tmin);
        }
        self.advance_tuples(t, tmin, &inputs);
        for atom in inputs {
            if let Some(i) = self.pred_index(&atom.predicate) {
                self.stores[i].insert(t, atom);
            }
        }

        let mut result = TickResult::new(t);
        let mut changed_memo: HashMap<(usize, View), bool> = HashMap::default();
        for si in 0..self.plan.strata.len() {
            let recursive = self.plan.strata[si].recursive;
            if recursive {
                loop {
                    let mut grew = false;
                    let mut produced = Vec::new();
                    for ri in self.plan.strata[si].rules.clone() {
                        produced.push((ri, self.solve(ri)?));
                    }
                    for (ri, out) in produced {
                        grew |= self.emit(ri, &out, &mut result);
                    }
                    if !grew {
                        break;
                    }
                }
            } else {
                for ri in self.plan.strata[si].rules.clone() {
                    let rule = &self.plan.rules[ri];
                    let reuse = !first
                        && !rule.volatile
                        && self.cache[ri].is_some()
                        && !rule
                            .formulas
                            .iter()
                            .any(|&f| self.changed(f, &mut changed_memo));
                    let out = if reuse {
                        self.stats.rules_skipped += 1;
                        self.cache[ri].take().expect("cached")
                    } else {
                        let mut out = self.solve(ri)?;
                        out.sort();
                        out.dedup();
                        out
                    };
                    self.emit(ri, &out, &mut result);
                    self.cache[ri] = Some(out);
                }
            }
        }
        // snapshot box relations for the next tick's comparison
        let keys: Vec<(usize, u64)> = self.box_cache.keys().copied().collect();
        for (pred, p) in keys {
            let rel = self.box_relation(pred, p);
            self.box_cache.insert((pred, p), rel);
        }
        Ok(result)
    }

    fn pred_index(&self, p: &Symbol) -> Option<usize> {
        self.pred_ids.get(p).copied()
    }

    fn advance_tuples(&mut self, now: Time, tmin: Time, inputs: &[Atom]) {
        if self.plan.max_tuple == 0 && !self.plan.rules.iter().any(|r| r.volatile) {
            return;
        }
        for a in inputs {
            self.ring.push_back((now, a.clone()));
        }
        self.inputs_seen += inputs.len() as u64;
        while self.ring.len() as u64 > self.plan.max_tuple {
            self.ring.pop_front();
        }
        self.tuple_views.clear();
        let sizes: BTreeSet<u64> = self
            .plan
            .rules
            .iter()
            .flat_map(|r| r.formulas.iter())
            .filter_map(|f| match f.1 {
                View::Tuple(n, _) => Some(n),
                _ => None,
            })
            .collect();
        for n in sizes {
            let mut visible = Stream::with_timeline(tmin, now).expect("valid timeline");
            let take = (n as usize).min(self.ring.len());
            let tail = self.ring.iter().skip(self.ring.len() - take);
            for (t, a) in tail {
                visible.insert(*t, a.clone()).expect("ground");
            }
            let start = if n == 0 {
                now
            } else if self.inputs_seen < n {
                tmin
            } else {
                self.ring[self.ring.len() - take].0
            };
            self.tuple_views.insert(
                n,
                TupleView {
                    timeline: Interval::new(start, now),
                    visible,
                },
            );
        }
    }

    fn window_lo(&self, past: u64) -> Time {
        let now = self.now.expect("inside a tick");
        self.tmin
            .expect("inside a tick")
            .max(now.saturating_sub(past))
    }

    fn box_relation(&self, pred: usize, p: u64) -> HashSet<Atom> {
        let now = self.now.expect("inside a tick");
        let lo = self.window_lo(p);
        let store = &self.stores[pred];
        store
            .slice(now)
            .iter()
            .filter(|a| store.run_start(a).is_some_and(|s| s <= lo))
            .cloned()
            .collect()
    }

    /// Whether the relation denoted by `(pred, view)` may differ from the
    /// previous tick.
    fn changed(&self, formula: (usize, View), memo: &mut HashMap<(usize, View), bool>) -> bool {
        if let Some(&c) = memo.get(&formula) {
            return c;
        }
        let (pred, view) = formula;
        let store = &self.stores[pred];
        let now = self.now.expect("inside a tick");
        let tmin = self.tmin.expect("inside a tick");
        let c = store.past_touched
            || match view {
                View::Now => {
                    let (cur, prev) = (store.slice(now), store.slice(now - 1));
                    cur.len() != prev.len() || cur.iter().any(|a| !prev.contains(a))
                }
                View::Diamond(p) => {
                    let prev_lo = tmin.max((now - 1).saturating_sub(p));
                    let lo = self.window_lo(p);
                    store
                        .entered
                        .iter()
                        .any(|(_, old)| old.is_none_or(|o| o < prev_lo))
                        || (prev_lo < lo
                            && store
                                .slice(prev_lo)
                                .iter()
                                .any(|a| store.seen.get(a) == Some(prev_lo)))
                }
                View::At(p) => {
                    let prev_lo = tmin.max((now - 1).saturating_sub(p));
                    let lo = self.window_lo(p);
                    !store.slice(now).is_empty()
                        || (prev_lo < lo && !store.slice(prev_lo).is_empty())
                }
                View::AtAll => !store.slice(now).is_empty(),
                View::Box(p) => self.box_cache.get(&(pred, p)) != Some(&self.box_relation(pred, p)),
                View::Tuple(..) => true,
            };
        memo.insert(formula, c);
        c
    }

    /// Enters the instances produced by rule `ri`; returns whether any atom
    /// was new to the history.
    fn emit(&mut self, ri: usize, out: &Instances, result: &mut TickResult) -> bool {
        let now = self.now.expect("inside a tick");
        let tmin = self.tmin.expect("inside a tick");
        let at_head = self.plan.rules[ri].is_at_head();
        let store = self.pred_index(&self.plan.rules[ri].head_pred);
        let mut grew = false;
        for (raw, atom) in out {
            let t = match raw {
                RawTime::Now => now,
                RawTime::At(term) => match term.as_number().and_then(Number::as_time) {
                    Some(t) if (tmin..=now).contains(&t) => t,
                    _ => continue,
                },
            };
            if at_head {
                result.at_derivations.insert((t, atom.clone()));
            }
            if t == now {
                result.add(atom.clone());
            }
            if let Some(i) = store {
                grew |= self.stores[i].insert(t, atom.clone());
            }
        }
        grew
    }

    fn solve(&mut self, ri: usize) -> Result<Instances, EvalError> {
        self.stats.rule_firings += 1;
        let rule = &self.plan.rules[ri];
        let mut bindings = vec![None; rule.vars];
        let mut out = Vec::new();
        Solver { engine: self, rule }.run(0, &mut bindings, &mut out)?;
        Ok(out)
    }
}

struct Solver<'a> {
    engine: &'a IncrementalEngine,
    rule: &'a CompiledRule,
}

fn value<'b>(slot: &'b Slot, b: &'b [Option<Term>]) -> Option<&'b Term> {
    match slot {
        Slot::Const(t) => Some(t),
        Slot::Var(i) => b[*i].as_ref(),
    }
}

/// Unifies pattern slots with a ground atom, recording newly bound slots.
fn unify(args: &[Slot], atom: &Atom, b: &mut [Option<Term>], newly: &mut Vec<usize>) -> bool {
    for (slot, arg) in args.iter().zip(&atom.args) {
        match slot {
            Slot::Const(c) => {
                if c != arg {
                    return false;
                }
            }
            Slot::Var(i) => match &b[*i] {
                Some(v) => {
                    if v != arg {
                        return false;
                    }
                }
                None => {
                    b[*i] = Some(arg.clone());
                    newly.push(*i);
                }
            },
        }
    }
    true
}

fn undo(b: &mut [Option<Term>], newly: &mut Vec<usize>) {
    for i in newly.drain(..) {
        b[i] = None;
    }
}

impl Solver<'_> {
    fn run(
        &self,
        k: usize,
        b: &mut Vec<Option<Term>>,
        out: &mut Instances,
    ) -> Result<(), EvalError> {
        let Some(step) = self.rule.steps.get(k) else {
            let args = self
                .rule
                .head_args
                .iter()
                .map(|s| value(s, b).cloned().expect("safe rule"))
                .collect();
            let time = match &self.rule.head_time {
                None => RawTime::Now,
                Some(s) => RawTime::At(value(s, b).cloned().expect("safe rule")),
            };
            out.push((time, Atom::new(self.rule.head_pred.clone(), args)));
            return Ok(());
        };
        match step {
            Step::Comp {
                op: CompOp::Eq,
                lhs,
                rhs,
            } if value(lhs, b).is_none() || value(rhs, b).is_none() => {
                // an equality with one side free assigns it
                let (free, other) = match (lhs, rhs) {
                    (Slot::Var(i), o) if b[*i].is_none() => (*i, o),
                    (o, Slot::Var(i)) => (*i, o),
                    _ => unreachable!("one side is an unbound variable"),
                };
                let Some(v) = value(other, b).cloned() else {
                    return self.inputs(lhs, rhs, b).map(|_| ());
                };
                b[free] = Some(v);
                self.run(k + 1, b, out)?;
                b[free] = None;
            }
            Step::Comp { op, lhs, rhs } => {
                let (l, r) = self.inputs(lhs, rhs, b)?;
                if compare(*op, l, r) {
                    self.run(k + 1, b, out)?;
                }
            }
            Step::Math {
                op,
                result,
                a,
                b: rhs,
            } => {
                let (x, y) = self.inputs(a, rhs, b)?;
                let (Some(x), Some(y)) = (x.as_number(), y.as_number()) else {
                    return Ok(());
                };
                let Some(v) = arith(*op, x.value(), y.value()) else {
                    return Ok(());
                };
                let v = Term::Num(v);
                match result {
                    Slot::Var(i) if b[*i].is_none() => {
                        b[*i] = Some(v);
                        self.run(k + 1, b, out)?;
                        b[*i] = None;
                    }
                    other => {
                        if value(other, b) == Some(&v) {
                            self.run(k + 1, b, out)?;
                        }
                    }
                }
            }
            Step::Match {
                pred,
                view,
                args,
                time,
            } => self.matches(k, *pred, *view, args, time.as_ref(), b, out)?,
        }
        Ok(())
    }

    fn inputs<'b>(
        &self,
        x: &'b Slot,
        y: &'b Slot,
        b: &'b [Option<Term>],
    ) -> Result<(&'b Term, &'b Term), EvalError> {
        match (value(x, b), value(y, b)) {
            (Some(l), Some(r)) => Ok((l, r)),
            _ => Err(EvalError::UnboundBuiltin {
                builtin: format!("{:?}", self.rule.steps),
                variable: "?".into(),
            }),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn matches(
        &self,
        k: usize,
        pred: usize,
        view: View,
        args: &[Slot],
        time: Option<&Slot>,
        b: &mut Vec<Option<Term>>,
        out: &mut Instances,
    ) -> Result<(), EvalError> {
        let e = self.engine;
        let now = e.now.expect("inside a tick");
        let store = &e.stores[pred];
        let bound_terms: Vec<(usize, Term)> = args
            .iter()
            .enumerate()
            .filter_map(|(i, s)| value(s, b).map(|t| (i, t.clone())))
            .collect();
        let bound: Vec<(usize, &Term)> = bound_terms.iter().map(|(i, t)| (*i, t)).collect();
        let mut newly = Vec::new();
        let mut hits: Vec<(Option<Time>, Atom)> = Vec::new();
        match view {
            View::Now => {
                hits.extend(store.candidates(now, &bound).map(|a| (None, a.clone())));
            }
            View::Diamond(p) => {
                let lo = e.window_lo(p);
                store.seen.for_each(&bound, |a, t| {
                    if t >= lo {
                        hits.push((None, a.clone()));
                    }
                });
            }
            View::Box(p) => {
                let lo = e.window_lo(p);
                for a in store.candidates(now, &bound) {
                    if store.run_start(a).is_some_and(|s| s <= lo) {
                        hits.push((None, a.clone()));
                    }
                }
            }
            View::At(_) | View::AtAll => {
                let lo = match view {
                    View::At(p) => e.window_lo(p),
                    _ => e.tmin.expect("inside a tick"),
                };
                for t in time_points(time, b, lo, now) {
                    hits.extend(store.candidates(t, &bound).map(|a| (Some(t), a.clone())));
                }
            }
            View::Tuple(n, op) => {
                let tv = &e.tuple_views[&n];
                let pname = &e.plan.preds[pred];
                let tl = tv.timeline;
                let at = |t: Time, hits: &mut Vec<(Option<Time>, Atom)>, stamp: bool| {
                    tv.visible.for_each_candidate(t, pname, &bound, &mut |a| {
                        hits.push((stamp.then_some(t), a.clone()));
                    });
                };
                match op {
                    TupleOp::Diamond => {
                        for t in tl.iter() {
                            at(t, &mut hits, false);
                        }
                        hits.sort();
                        hits.dedup();
                    }
                    TupleOp::Box => {
                        at(now, &mut hits, false);
                        hits.retain(|(_, a)| (tl.start..now).all(|t| tv.visible.contains(t, a)));
                    }
                    TupleOp::At => {
                        for t in time_points(time, b, tl.start, now) {
                            at(t, &mut hits, true);
                        }
                    }
                }
            }
        }
        for (t, atom) in hits {
            let ok = unify(args, &atom, b, &mut newly)
                && match (t, time) {
                    (Some(t), Some(Slot::Var(i))) if b[*i].is_none() => {
                        b[*i] = Some(Term::Num(Number::from_time(t)));
                        newly.push(*i);
                        true
                    }
                    _ => true,
                };
            if ok {
                self.run(k + 1, b, out)?;
            }
            undo(b, &mut newly);
        }
        Ok(())
    }
}

/// Time points an `@` atom ranges over: the bound time if it is an integer
/// inside `[lo, now]`, or every point when the time variable is free.
fn time_points(time: Option<&Slot>, b: &[Option<Term>], lo: Time, now: Time) -> Vec<Time> {
    match time.and_then(|s| value(s, b)) {
        Some(term) => term
            .as_number()
            .and_then(Number::as_time)
            .filter(|t| (lo..=now).contains(t))
            .into_iter()
            .collect(),
        None => (lo..=now).collect(),
    }
}

/// Runs the incremental engine over a whole stream, returning the answers
/// on `outputs` at each tick.
pub fn run_stream_incremental(
    program: &Program,
    stream: &Stream,
    outputs: &[Symbol],
) -> Result<Vec<(Time, BTreeSet<Atom>)>, EvalError> {
    let mut engine = IncrementalEngine::new(program)?;
    let Some(tl) = stream.timeline() else {
        return Ok(Vec::new());
    };
    tl.iter()
        .map(|t| {
            let facts = stream
                .facts_at(t)
                .into_iter()
                .flat_map(|f| f.iter().cloned());
            engine.push_tick(t, facts).map(|r| (t, r.answers(outputs)))
        })
        .collect()
}
