//! Window operators and the temporal modalities evaluated over a window.
//!
//! A time window `time_win(n, 0, 1, ..)` evaluated at `now` sees the time
//! points `[max(tmin, now - n), now]`. A tuple window `tuple_win(n, 0, 1, ..)`
//! sees the `n` most recent atoms of the input stream; inside one time point
//! atoms are ordered canonically and larger atoms count as more recent.

use rustc_hash::FxHashSet as HashSet;

use thiserror::Error;

use crate::model::{
    match_fact, substitute, Atom, Substitution, TemporalOp, Term, Time, WindowKind, WindowSpec,
};
use crate::stream::{Interval, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("unsupported window {spec:?}: only future = 0 and step = 1 are supported")]
    Unsupported { spec: WindowSpec },
    #[error("evaluation time {now} lies outside the stream timeline")]
    OutsideTimeline { now: Time },
}

/// Read access to time-indexed ground atoms.
pub trait FactSource {
    fn timeline(&self) -> Option<Interval>;

    /// Calls `f` with every atom of `predicate` at `t` whose arguments agree
    /// with `bound` (position, value); may include non-matching atoms.
    fn for_each_candidate(
        &self,
        t: Time,
        predicate: &str,
        bound: &[(usize, &Term)],
        f: &mut dyn FnMut(&Atom),
    );

    fn contains(&self, t: Time, atom: &Atom) -> bool;

    /// Atoms at `t` in canonical order.
    fn sorted_atoms_at(&self, t: Time) -> Vec<Atom>;
}

impl FactSource for Stream {
    fn timeline(&self) -> Option<Interval> {
        Stream::timeline(self)
    }

    fn for_each_candidate(
        &self,
        t: Time,
        predicate: &str,
        bound: &[(usize, &Term)],
        f: &mut dyn FnMut(&Atom),
    ) {
        if let Some(facts) = self.facts_at(t).and_then(|fs| fs.predicate(predicate)) {
            facts.candidates(bound).for_each(f);
        }
    }

    fn contains(&self, t: Time, atom: &Atom) -> bool {
        Stream::contains(self, t, atom)
    }

    fn sorted_atoms_at(&self, t: Time) -> Vec<Atom> {
        self.facts_at(t)
            .map(|fs| fs.sorted().into_iter().cloned().collect())
            .unwrap_or_default()
    }
}

/// The union of several streams sharing one timeline (the first layer's).
pub struct Layers<'a>(pub Vec<&'a Stream>);

impl FactSource for Layers<'_> {
    fn timeline(&self) -> Option<Interval> {
        self.0.first().and_then(|s| s.timeline())
    }

    fn for_each_candidate(
        &self,
        t: Time,
        predicate: &str,
        bound: &[(usize, &Term)],
        f: &mut dyn FnMut(&Atom),
    ) {
        for layer in &self.0 {
            layer.for_each_candidate(t, predicate, bound, f);
        }
    }

    fn contains(&self, t: Time, atom: &Atom) -> bool {
        self.0.iter().any(|s| s.contains(t, atom))
    }

    fn sorted_atoms_at(&self, t: Time) -> Vec<Atom> {
        let mut all: Vec<Atom> = self.0.iter().flat_map(|s| s.sorted_atoms_at(t)).collect();
        all.sort();
        all.dedup();
        all
    }
}

/// A window applied at one evaluation time.
pub struct WindowView<'a> {
    timeline: Interval,
    source: &'a dyn FactSource,
    /// Tuple windows materialize exactly the visible atoms.
    visible: Option<Stream>,
}

impl<'a> WindowView<'a> {
    /// A view over `[start, end]` of `source` with every atom visible.
    pub fn span(source: &'a dyn FactSource, start: Time, end: Time) -> Self {
        WindowView {
            timeline: Interval::new(start, end),
            source,
            visible: None,
        }
    }

    pub fn timeline(&self) -> Interval {
        self.timeline
    }

    fn source(&self) -> &dyn FactSource {
        match &self.visible {
            Some(v) => v,
            None => self.source,
        }
    }

    /// Visible atoms at `t`, in canonical order.
    pub fn atoms_at(&self, t: Time) -> Vec<Atom> {
        if !self.timeline.contains(t) {
            return Vec::new();
        }
        self.source().sorted_atoms_at(t)
    }
}

/// Restricts `source` to the part selected by `spec` at time `now`.
pub fn window_view<'a>(
    source: &'a dyn FactSource,
    now: Time,
    spec: &WindowSpec,
) -> Result<WindowView<'a>, WindowError> {
    if spec.future != 0 || spec.step != 1 {
        return Err(WindowError::Unsupported { spec: *spec });
    }
    let tl = source
        .timeline()
        .filter(|tl| tl.contains(now))
        .ok_or(WindowError::OutsideTimeline { now })?;
    match spec.kind {
        WindowKind::Time => Ok(WindowView::span(
            source,
            tl.start.max(now.saturating_sub(spec.past)),
            now,
        )),
        WindowKind::Tuple => {
            let wanted = spec.past as usize;
            let mut visible = Stream::with_timeline(tl.start, now).expect("now within timeline");
            let mut taken = 0usize;
            let mut start = now;
            let mut t = now;
            while taken < wanted {
                let atoms = source.sorted_atoms_at(t);
                for atom in atoms.into_iter().rev().take(wanted - taken) {
                    visible
                        .insert(t, atom)
                        .expect("ground atom inside timeline");
                    taken += 1;
                }
                start = t;
                if t == tl.start {
                    break;
                }
                t -= 1;
            }
            if taken < wanted {
                start = tl.start;
            }
            Ok(WindowView {
                timeline: Interval::new(start, now),
                source,
                visible: Some(visible),
            })
        }
    }
}

fn bound_args<'t>(pattern: &'t Atom, s: &'t Substitution) -> Vec<(usize, &'t Term)> {
    pattern
        .args
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.resolve(s).map(|v| (i, v)))
        .collect()
}

fn matches_at(
    view: &WindowView<'_>,
    t: Time,
    pattern: &Atom,
    s: &Substitution,
    out: &mut Vec<Substitution>,
) {
    let bound = bound_args(pattern, s);
    view.source()
        .for_each_candidate(t, &pattern.predicate, &bound, &mut |fact| {
            if let Some(ext) = match_fact(pattern, fact, s) {
                out.push(ext);
            }
        });
}

/// Evaluates `op pattern` over the view, returning every extension of `s`
/// under which the formula holds.
pub fn eval_temporal(
    view: &WindowView<'_>,
    op: &TemporalOp,
    pattern: &Atom,
    s: &Substitution,
) -> HashSet<Substitution> {
    let tl = view.timeline;
    let mut found = Vec::new();
    match op {
        TemporalOp::Diamond => {
            for t in tl.iter() {
                matches_at(view, t, pattern, s, &mut found);
            }
        }
        TemporalOp::Box => {
            let mut at_end = Vec::new();
            matches_at(view, tl.end, pattern, s, &mut at_end);
            let src = view.source();
            for ext in at_end {
                let ground = substitute(pattern, &ext);
                if (tl.start..tl.end).all(|t| src.contains(t, &ground)) {
                    found.push(ext);
                }
            }
        }
        TemporalOp::At(term) => match term {
            Term::Var(v) if !s.is_bound(v) => {
                for t in tl.iter() {
                    let mut here = Vec::new();
                    matches_at(view, t, pattern, s, &mut here);
                    for mut ext in here {
                        if ext.bind(v, Term::Num(crate::model::Number::from_time(t))) {
                            found.push(ext);
                        }
                    }
                }
            }
            other => {
                let time = other
                    .resolve(s)
                    .and_then(Term::as_number)
                    .and_then(|n| n.as_time());
                if let Some(t) = time.filter(|t| tl.contains(*t)) {
                    matches_at(view, t, pattern, s, &mut found);
                }
            }
        },
    }
    found.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_atom;

    fn stream(tmin: Time, tmax: Time, facts: &[(Time, &str)]) -> Stream {
        let mut s = Stream::with_timeline(tmin, tmax).unwrap();
        for (t, a) in facts {
            s.insert(*t, parse_atom(a).unwrap()).unwrap();
        }
        s
    }

    fn subst(pairs: &[(&str, Term)]) -> Substitution {
        pairs
            .iter()
            .fold(Substitution::new(), |s, (v, t)| s.with(v, t.clone()))
    }

    #[test]
    fn time_window_covers_full_range() {
        let s = stream(0, 20, &[]);
        let v = window_view(&s, 9, &WindowSpec::time(9)).unwrap();
        assert_eq!(v.timeline(), Interval::new(0, 9));
    }

    #[test]
    fn time_window_clips_at_stream_start() {
        let s = stream(0, 20, &[]);
        let v = window_view(&s, 5, &WindowSpec::time(9)).unwrap();
        assert_eq!(v.timeline(), Interval::new(0, 5));
    }

    #[test]
    fn rejects_future_and_strided_windows() {
        let s = stream(0, 5, &[]);
        let mut spec = WindowSpec::time(3);
        spec.future = 1;
        assert!(matches!(
            window_view(&s, 2, &spec),
            Err(WindowError::Unsupported { .. })
        ));
        let mut spec = WindowSpec::time(3);
        spec.step = 2;
        assert!(window_view(&s, 2, &spec).is_err());
        assert!(matches!(
            window_view(&s, 6, &WindowSpec::time(3)),
            Err(WindowError::OutsideTimeline { now: 6 })
        ));
    }

    #[test]
    fn tuple_window_keeps_most_recent_atoms() {
        let s = stream(0, 3, &[(1, "a(1)"), (3, "b(1)"), (3, "b(2)")]);
        let v = window_view(&s, 3, &WindowSpec::tuple(2)).unwrap();
        assert_eq!(v.timeline(), Interval::new(3, 3));
        assert_eq!(v.atoms_at(3).len(), 2);
        assert!(v.atoms_at(1).is_empty());
    }

    #[test]
    fn tuple_window_partial_time_point() {
        let s = stream(0, 3, &[(1, "a(1)"), (1, "a(2)"), (3, "b(1)")]);
        let v = window_view(&s, 3, &WindowSpec::tuple(2)).unwrap();
        assert_eq!(v.timeline(), Interval::new(1, 3));
        // a(2) sorts after a(1), so it is the newer of the two
        assert_eq!(v.atoms_at(1), vec![parse_atom("a(2)").unwrap()]);
    }

    #[test]
    fn tuple_window_with_too_few_atoms_spans_whole_stream() {
        let s = stream(0, 3, &[(2, "a(1)")]);
        let v = window_view(&s, 3, &WindowSpec::tuple(5)).unwrap();
        assert_eq!(v.timeline(), Interval::new(0, 3));
    }

    #[test]
    fn diamond_finds_match_anywhere_in_window() {
        let s = stream(0, 9, &[(5, "traffic(m1,12,1)")]);
        let v = window_view(&s, 9, &WindowSpec::time(9)).unwrap();
        let pattern = parse_atom("traffic(MES,VAL,1)").unwrap();
        let out = eval_temporal(&v, &TemporalOp::Diamond, &pattern, &Substitution::new());
        let want = subst(&[("MES", Term::sym("m1")), ("VAL", Term::num(12.0))]);
        assert_eq!(out, HashSet::from_iter([want]));
    }

    #[test]
    fn box_requires_every_time_point() {
        let facts = [
            (2, "traffic(m1,12,1)"),
            (3, "traffic(m1,12,1)"),
            (4, "traffic(m1,12,1)"),
        ];
        let s = stream(0, 9, &facts);
        let v = WindowView::span(&s, 2, 4);
        let pattern = parse_atom("traffic(m1,12,1)").unwrap();
        let out = eval_temporal(&v, &TemporalOp::Box, &pattern, &Substitution::new());
        assert_eq!(out, HashSet::from_iter([Substitution::new()]));

        let gap = stream(0, 9, &[facts[0], facts[2]]);
        let v = WindowView::span(&gap, 2, 4);
        assert!(eval_temporal(&v, &TemporalOp::Box, &pattern, &Substitution::new()).is_empty());
    }

    #[test]
    fn at_enumerates_times() {
        let s = stream(0, 8, &[(7, "pollution(m1,9,2)"), (8, "pollution(m1,11,2)")]);
        let v = window_view(&s, 8, &WindowSpec::time(9)).unwrap();
        assert_eq!(v.timeline(), Interval::new(0, 8));
        let pattern = parse_atom("pollution(m1,VAL,2)").unwrap();
        let out = eval_temporal(
            &v,
            &TemporalOp::At(Term::var("T")),
            &pattern,
            &Substitution::new(),
        );
        let want = HashSet::from_iter([
            subst(&[("T", Term::num(7.0)), ("VAL", Term::num(9.0))]),
            subst(&[("T", Term::num(8.0)), ("VAL", Term::num(11.0))]),
        ]);
        assert_eq!(out, want);
    }

    #[test]
    fn at_with_bound_time_checks_membership() {
        let s = stream(0, 8, &[(2, "p(1)"), (7, "p(1)")]);
        let v = window_view(&s, 8, &WindowSpec::time(3)).unwrap();
        let pattern = parse_atom("p(X)").unwrap();
        let at7 = TemporalOp::At(Term::num(7.0));
        assert_eq!(
            eval_temporal(&v, &at7, &pattern, &Substitution::new()).len(),
            1
        );
        let at2 = TemporalOp::At(Term::num(2.0));
        assert!(eval_temporal(&v, &at2, &pattern, &Substitution::new()).is_empty());
        let bound = Substitution::new().with("T", Term::num(7.0));
        let at_t = TemporalOp::At(Term::var("T"));
        assert_eq!(eval_temporal(&v, &at_t, &pattern, &bound).len(), 1);
        let half = Substitution::new().with("T", Term::num(7.5));
        assert!(eval_temporal(&v, &at_t, &pattern, &half).is_empty());
    }

    #[test]
    fn zero_length_window_operators_coincide() {
        let s = stream(0, 4, &[(3, "p(1)"), (4, "p(2)"), (4, "p(3)")]);
        let v = window_view(&s, 4, &WindowSpec::time(0)).unwrap();
        let pattern = parse_atom("p(X)").unwrap();
        let e = Substitution::new();
        let d = eval_temporal(&v, &TemporalOp::Diamond, &pattern, &e);
        let b = eval_temporal(&v, &TemporalOp::Box, &pattern, &e);
        let mut a: HashSet<Substitution> = HashSet::default();
        for mut x in eval_temporal(&v, &TemporalOp::At(Term::var("T")), &pattern, &e) {
            let mut stripped = Substitution::new();
            for (k, t) in x.iter() {
                if &**k != "T" {
                    stripped.bind(k, t.clone());
                }
            }
            x = stripped;
            a.insert(x);
        }
        assert_eq!(d, b);
        assert_eq!(d, a);
        assert_eq!(d.len(), 2);
    }
}
