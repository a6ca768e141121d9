//! Reference evaluator: recomputes the least model at every tick from the
//! input stream and the history of earlier derivations.

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashSet as HashSet;

use thiserror::Error;

use crate::model::{
    substitute, Atom, BuiltinAtom, CompOp, ExtendedAtom, Head, Literal, MathOp, Number, Program,
    Rule, Substitution, Symbol, TemporalOp, Term, Time,
};
use crate::stream::Stream;
use crate::window::{eval_temporal, window_view, FactSource, Layers, WindowError, WindowView};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("builtin `{builtin}` has unbound input `{variable}`")]
    UnboundBuiltin { builtin: String, variable: Symbol },
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error("program uses a window with future or step other than 0/1: {0}")]
    UnsupportedWindow(String),
    #[error("input atom `{0}` is not ground")]
    NonGroundInput(Atom),
    #[error("ticks must be pushed consecutively: got {got} after {last}")]
    OutOfOrder { got: Time, last: Time },
}

/// What one tick of evaluation produced.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TickResult {
    pub time: Time,
    /// Atoms derived to hold at `time`, keyed by predicate.
    pub derived: BTreeMap<Symbol, BTreeSet<Atom>>,
    /// Every `(time, atom)` produced by a rule with an `@` head.
    pub at_derivations: BTreeSet<(Time, Atom)>,
}

impl TickResult {
    pub fn new(time: Time) -> Self {
        TickResult {
            time,
            ..Default::default()
        }
    }

    pub fn holds(&self, atom: &Atom) -> bool {
        self.derived
            .get(&atom.predicate)
            .is_some_and(|set| set.contains(atom))
    }

    /// Derived atoms of the listed predicates, in canonical order.
    pub fn answers(&self, outputs: &[Symbol]) -> BTreeSet<Atom> {
        outputs
            .iter()
            .filter_map(|p| self.derived.get(p))
            .flatten()
            .cloned()
            .collect()
    }

    pub fn derived_count(&self) -> usize {
        self.derived.values().map(BTreeSet::len).sum()
    }

    pub(crate) fn add(&mut self, atom: Atom) {
        self.derived
            .entry(atom.predicate.clone())
            .or_default()
            .insert(atom);
    }
}

/// Work counters for one or more ticks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NaiveStats {
    pub rule_firings: u64,
    pub passes: u64,
}

/// Rejects windows the evaluators do not support.
pub fn validate_program(program: &Program) -> Result<(), EvalError> {
    match program.windows().find(|w| w.future != 0 || w.step != 1) {
        Some(w) => Err(EvalError::UnsupportedWindow(format!("{w:?}"))),
        None => Ok(()),
    }
}

/// Applies a builtin under `s`: `Some(extension)` if it holds, `None` if not.
pub fn eval_builtin(b: &BuiltinAtom, s: &Substitution) -> Result<Option<Substitution>, EvalError> {
    let ground = |t: &Term| -> Result<Term, EvalError> {
        match t {
            Term::Var(v) => s.get(v).cloned().ok_or_else(|| EvalError::UnboundBuiltin {
                builtin: format!("{b:?}"),
                variable: v.clone(),
            }),
            other => Ok(other.clone()),
        }
    };
    match b {
        BuiltinAtom::Comp {
            op: CompOp::Eq,
            lhs,
            rhs,
        } if eq_binds(lhs, rhs, s).is_some() => {
            let (var, other) = eq_binds(lhs, rhs, s).expect("checked");
            let mut out = s.clone();
            Ok(out.bind(var, ground(other)?).then_some(out))
        }
        BuiltinAtom::Comp { op, lhs, rhs } => {
            let (l, r) = (ground(lhs)?, ground(rhs)?);
            Ok(compare(*op, &l, &r).then(|| s.clone()))
        }
        BuiltinAtom::Math {
            op,
            result,
            a,
            b: rhs,
        } => {
            let (x, y) = match (ground(a)?.as_number(), ground(rhs)?.as_number()) {
                (Some(x), Some(y)) => (x.value(), y.value()),
                _ => return Ok(None),
            };
            let Some(value) = arith(*op, x, y) else {
                return Ok(None);
            };
            let value = Term::Num(value);
            let mut out = s.clone();
            let ok = match result {
                Term::Var(v) => out.bind(v, value),
                constant => *constant == value,
            };
            Ok(ok.then_some(out))
        }
    }
}

/// For `X == Y` with exactly one side an unbound variable: that variable
/// and the other side, which the comparison then assigns to it.
fn eq_binds<'t>(lhs: &'t Term, rhs: &'t Term, s: &Substitution) -> Option<(&'t Symbol, &'t Term)> {
    let unbound = |t: &'t Term| match t {
        Term::Var(v) if !s.is_bound(v) => Some(v),
        _ => None,
    };
    match (unbound(lhs), unbound(rhs)) {
        (Some(v), None) => Some((v, rhs)),
        (None, Some(v)) => Some((v, lhs)),
        _ => None,
    }
}

/// Whether `b` can be evaluated under `s`: its inputs are bound, or it is an
/// equality with one side bound.
pub(crate) fn builtin_ready(b: &BuiltinAtom, s: &Substitution) -> bool {
    match b {
        BuiltinAtom::Comp {
            op: CompOp::Eq,
            lhs,
            rhs,
        } => b.inputs().iter().all(|v| s.is_bound(v)) || eq_binds(lhs, rhs, s).is_some(),
        _ => b.inputs().iter().all(|v| s.is_bound(v)),
    }
}

/// `==`, `!=` and `s!=` compare terms structurally; the ordering operators
/// hold only between numbers.
pub fn compare(op: CompOp, l: &Term, r: &Term) -> bool {
    let nums = || Some((l.as_number()?.value(), r.as_number()?.value()));
    match op {
        CompOp::Eq => l == r,
        CompOp::Ne | CompOp::SymNe => l != r,
        CompOp::Gt => nums().is_some_and(|(a, b)| a > b),
        CompOp::Lt => nums().is_some_and(|(a, b)| a < b),
        CompOp::Ge => nums().is_some_and(|(a, b)| a >= b),
        CompOp::Le => nums().is_some_and(|(a, b)| a <= b),
    }
}

/// Arithmetic on finite numbers; `None` for division by zero or overflow.
pub fn arith(op: MathOp, x: f64, y: f64) -> Option<Number> {
    let v = match op {
        MathOp::Add => x + y,
        MathOp::Sub => x - y,
        MathOp::Mul => x * y,
        MathOp::Div => {
            if y == 0.0 {
                log::warn!("division by zero in MATH(/, _, {x}, {y}); no result");
                return None;
            }
            x / y
        }
    };
    Number::new(v)
}

/// The time denoted by an `@` head, if it is an integer inside `[tmin, now]`.
pub fn head_time(term: &Term, s: &Substitution, tmin: Time, now: Time) -> Option<Time> {
    let t = term.resolve(s)?.as_number()?.as_time()?;
    (tmin..=now).contains(&t).then_some(t)
}

fn eval_extended(
    ea: &ExtendedAtom,
    input: &Stream,
    all: &dyn FactSource,
    now: Time,
    s: &Substitution,
) -> Result<HashSet<Substitution>, EvalError> {
    let tmin = all.timeline().map_or(now, |tl| tl.start);
    Ok(match ea {
        ExtendedAtom::Plain(a) => {
            eval_temporal(&WindowView::span(all, now, now), &TemporalOp::Diamond, a, s)
        }
        ExtendedAtom::At(t, a) => eval_temporal(
            &WindowView::span(all, tmin, now),
            &TemporalOp::At(t.clone()),
            a,
            s,
        ),
        ExtendedAtom::Windowed { spec, op, atom } => {
            // tuple windows count input atoms only
            let source: &dyn FactSource = match spec.kind {
                crate::model::WindowKind::Tuple => input,
                crate::model::WindowKind::Time => all,
            };
            let view = window_view(source, now, spec)?;
            eval_temporal(&view, op, atom, s)
        }
    })
}

fn fire_on(
    rule: &Rule,
    input: &Stream,
    all: &dyn FactSource,
    now: Time,
) -> Result<BTreeSet<(Time, Atom)>, EvalError> {
    // Builtins run as soon as they can, wherever they appear in the body;
    // all substitutions bind the same variables, so readiness is uniform.
    let mut subs = vec![Substitution::new()];
    let mut pending: Vec<&BuiltinAtom> = rule
        .body
        .iter()
        .filter_map(|l| match l {
            Literal::Builtin(b) => Some(b),
            Literal::Atom(_) => None,
        })
        .collect();
    let flush =
        |subs: &mut Vec<Substitution>, pending: &mut Vec<&BuiltinAtom>| -> Result<(), EvalError> {
            while let Some(i) = subs
                .first()
                .and_then(|s0| pending.iter().position(|b| builtin_ready(b, s0)))
            {
                let b = pending.remove(i);
                let mut out = Vec::with_capacity(subs.len());
                for s in subs.drain(..) {
                    if let Some(ext) = eval_builtin(b, &s)? {
                        out.push(ext);
                    }
                }
                *subs = out;
            }
            Ok(())
        };
    flush(&mut subs, &mut pending)?;
    for lit in &rule.body {
        let Literal::Atom(ea) = lit else { continue };
        if subs.is_empty() {
            return Ok(BTreeSet::new());
        }
        let mut next = HashSet::default();
        for s in &subs {
            next.extend(eval_extended(ea, input, all, now, s)?);
        }
        subs = next.into_iter().collect();
        flush(&mut subs, &mut pending)?;
    }
    if subs.is_empty() {
        return Ok(BTreeSet::new());
    }
    if let Some(b) = pending.first() {
        // only reachable for programs built without the safety check
        let variable = b
            .inputs()
            .into_iter()
            .find(|v| !subs[0].is_bound(v))
            .cloned();
        return Err(EvalError::UnboundBuiltin {
            builtin: format!("{b:?}"),
            variable: variable.unwrap_or_else(|| "?".into()),
        });
    }
    let tmin = all.timeline().map_or(now, |tl| tl.start);
    let mut out = BTreeSet::new();
    for s in subs {
        match &rule.head {
            Head::Plain(a) => {
                out.insert((now, substitute(a, &s)));
            }
            Head::At(t, a) => {
                if let Some(time) = head_time(t, &s, tmin, now) {
                    out.insert((time, substitute(a, &s)));
                }
            }
        }
    }
    Ok(out)
}

/// All `(time, head)` pairs `rule` derives at `now` over the input stream
/// joined with previously derived atoms.
pub fn fire_rule(
    rule: &Rule,
    stream: &Stream,
    derived_history: &Stream,
    now: Time,
) -> Result<BTreeSet<(Time, Atom)>, EvalError> {
    let all = Layers(vec![stream, derived_history]);
    fire_on(rule, stream, &all, now)
}

/// Computes the least model at `now` by repeated passes over all rules.
///
/// `derived_history` holds atoms derived at earlier ticks and must share the
/// stream's timeline. It is not modified; the caller merges the result.
pub fn evaluate_tick_naive(
    program: &Program,
    stream: &Stream,
    derived_history: &Stream,
    now: Time,
) -> Result<TickResult, EvalError> {
    evaluate_tick_with_stats(
        program,
        stream,
        derived_history,
        now,
        &mut NaiveStats::default(),
    )
}

pub fn evaluate_tick_with_stats(
    program: &Program,
    stream: &Stream,
    derived_history: &Stream,
    now: Time,
    stats: &mut NaiveStats,
) -> Result<TickResult, EvalError> {
    validate_program(program)?;
    let tl = stream
        .timeline()
        .filter(|tl| tl.contains(now))
        .ok_or(WindowError::OutsideTimeline { now })?;
    let mut overlay = Stream::with_timeline(tl.start, tl.end).expect("valid timeline");
    let mut result = TickResult::new(now);
    loop {
        stats.passes += 1;
        let mut produced = Vec::new();
        {
            let all = Layers(vec![stream, derived_history, &overlay]);
            for rule in &program.rules {
                stats.rule_firings += 1;
                let at_head = matches!(rule.head, Head::At(..));
                for (t, atom) in fire_on(rule, stream, &all, now)? {
                    produced.push((t, atom, at_head));
                }
            }
        }
        let mut grew = false;
        for (t, atom, at_head) in produced {
            if at_head {
                result.at_derivations.insert((t, atom.clone()));
            }
            if t == now {
                result.add(atom.clone());
            }
            if !derived_history.contains(t, &atom) && !overlay.contains(t, &atom) {
                overlay.insert(t, atom).expect("derived atoms are ground");
                grew = true;
            }
        }
        if !grew {
            return Ok(result);
        }
    }
}

/// Merges the atoms of a tick result (and its `@` derivations) into `history`.
pub fn record(history: &mut Stream, result: &TickResult) {
    for atom in result.derived.values().flatten() {
        history
            .insert(result.time, atom.clone())
            .expect("tick within timeline");
    }
    for (t, atom) in &result.at_derivations {
        history
            .insert(*t, atom.clone())
            .expect("tick within timeline");
    }
}

/// Steps the reference evaluator through a fixed stream, tick by tick.
pub struct NaiveSession<'a> {
    program: &'a Program,
    stream: &'a Stream,
    history: Stream,
    next: Option<Time>,
    pub stats: NaiveStats,
}

impl<'a> NaiveSession<'a> {
    pub fn new(program: &'a Program, stream: &'a Stream) -> Result<Self, EvalError> {
        validate_program(program)?;
        let (history, next) = match stream.timeline() {
            Some(tl) => (
                Stream::with_timeline(tl.start, tl.end).expect("valid timeline"),
                Some(tl.start),
            ),
            None => (Stream::empty(), None),
        };
        Ok(NaiveSession {
            program,
            stream,
            history,
            next,
            stats: NaiveStats::default(),
        })
    }

    pub fn history(&self) -> &Stream {
        &self.history
    }

    /// Evaluates the next tick, or returns `None` past the end of the stream.
    pub fn step(&mut self) -> Option<Result<TickResult, EvalError>> {
        let now = self.next?;
        let end = self.stream.tmax()?;
        self.next = (now < end).then_some(now + 1);
        let result = evaluate_tick_with_stats(
            self.program,
            self.stream,
            &self.history,
            now,
            &mut self.stats,
        );
        if let Ok(r) = &result {
            record(&mut self.history, r);
        }
        Some(result)
    }
}

impl Iterator for NaiveSession<'_> {
    type Item = Result<TickResult, EvalError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.step()
    }
}

/// Runs the reference evaluator over the whole stream and returns, for each
/// tick, the derived atoms of the `outputs` predicates.
pub fn run_stream_naive(
    program: &Program,
    stream: &Stream,
    outputs: &[Symbol],
) -> Result<Vec<(Time, BTreeSet<Atom>)>, EvalError> {
    NaiveSession::new(program, stream)?
        .map(|r| r.map(|tick| (tick.time, tick.answers(outputs))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_atom, parse_program};

    fn stream(tmin: Time, tmax: Time, facts: &[(Time, &str)]) -> Stream {
        let mut s = Stream::with_timeline(tmin, tmax).unwrap();
        for (t, a) in facts {
            s.insert(*t, parse_atom(a).unwrap()).unwrap();
        }
        s
    }

    fn answers(src: &str, s: &Stream, out: &str) -> Vec<(Time, Vec<String>)> {
        let program = parse_program(src).unwrap();
        run_stream_naive(&program, s, &[out.into()])
            .unwrap()
            .into_iter()
            .map(|(t, set)| (t, set.iter().map(|a| a.to_string()).collect()))
            .collect()
    }

    #[test]
    fn comparisons() {
        let n = Term::num;
        assert!(compare(CompOp::Gt, &n(3.0), &n(2.0)));
        assert!(!compare(CompOp::Gt, &Term::sym("b"), &Term::sym("a")));
        assert!(compare(CompOp::Eq, &n(1.0), &n(1.0)));
        assert!(!compare(CompOp::Eq, &n(1.0), &Term::sym("a")));
        assert!(compare(CompOp::SymNe, &Term::sym("a"), &Term::sym("b")));
        assert!(!compare(CompOp::SymNe, &Term::sym("a"), &Term::sym("a")));
        assert!(compare(CompOp::Le, &n(2.0), &n(2.0)));
    }

    #[test]
    fn math_binds_result() {
        let b = BuiltinAtom::Math {
            op: MathOp::Sub,
            result: Term::var("D"),
            a: Term::var("X"),
            b: Term::num(1.0),
        };
        let s = Substitution::new().with("X", Term::num(5.0));
        let out = eval_builtin(&b, &s).unwrap().unwrap();
        assert_eq!(out.get("D"), Some(&Term::num(4.0)));
        // bound result acts as a check
        let s2 = s.clone().with("D", Term::num(3.0));
        assert_eq!(eval_builtin(&b, &s2).unwrap(), None);
    }

    #[test]
    fn division_by_zero_yields_nothing() {
        let b = BuiltinAtom::Math {
            op: MathOp::Div,
            result: Term::var("R"),
            a: Term::num(1.0),
            b: Term::num(0.0),
        };
        assert_eq!(eval_builtin(&b, &Substitution::new()).unwrap(), None);
    }

    #[test]
    fn unbound_builtin_input_is_an_error() {
        let b = BuiltinAtom::Comp {
            op: CompOp::Gt,
            lhs: Term::var("X"),
            rhs: Term::num(0.0),
        };
        assert!(matches!(
            eval_builtin(&b, &Substitution::new()),
            Err(EvalError::UnboundBuiltin { .. })
        ));
    }

    #[test]
    fn builtins_are_deferred_until_bound() {
        let s = stream(0, 0, &[(0, "p(3)")]);
        let got = answers("q(X) :- COMP(>, X, 2) and p(X)", &s, "q");
        assert_eq!(got, vec![(0, vec!["q(3)".to_string()])]);
    }

    #[test]
    fn recursion_reaches_fixpoint() {
        let s = stream(0, 0, &[(0, "e(1,2)"), (0, "e(2,3)"), (0, "e(3,4)")]);
        let src = "r(X,Y) :- e(X,Y), r(X,Z) :- r(X,Y) and e(Y,Z)";
        let got = answers(src, &s, "r");
        assert_eq!(got[0].1.len(), 6);
    }

    #[test]
    fn facts_hold_at_every_tick() {
        let s = stream(0, 2, &[]);
        let got = answers("city(3) :-", &s, "city");
        assert!(got.iter().all(|(_, a)| a == &vec!["city(3)".to_string()]));
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn derived_atoms_feed_windows() {
        let s = stream(0, 4, &[(1, "p(1)")]);
        let src = "q(X) :- p(X), r(X) :- time_win(2,0,1,diamond(q(X)))";
        let got = answers(src, &s, "r");
        let times: Vec<Time> = got
            .iter()
            .filter(|(_, a)| !a.is_empty())
            .map(|(t, _)| *t)
            .collect();
        assert_eq!(times, vec![1, 2, 3]);
    }

    #[test]
    fn at_heads_derive_in_the_past_and_drop_out_of_range() {
        let s = stream(0, 3, &[(2, "p(1)")]);
        let program = parse_program(
            "@(T, q(X)) :- time_win(3,0,1,@(T, p(X))),\
             @(U, z(X)) :- p(X) and MATH(+, U, 2, 5)",
        )
        .unwrap();
        let ticks: Vec<TickResult> = NaiveSession::new(&program, &s)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert!(ticks[3]
            .at_derivations
            .contains(&(2, parse_atom("q(1)").unwrap())));
        assert!(!ticks[3].holds(&parse_atom("q(1)").unwrap()));
        assert!(ticks[2].holds(&parse_atom("q(1)").unwrap()));
        assert!(ticks
            .iter()
            .all(|t| t.at_derivations.iter().all(|(_, a)| &*a.predicate != "z")));
    }

    #[test]
    fn past_derivation_is_visible_to_windows() {
        let s = stream(0, 3, &[(3, "p(1)")]);
        let program = parse_program(
            "@(U, q(X)) :- time_win(3,0,1,@(T, p(X))) and MATH(-, U, T, 2),\
             r(X) :- time_win(2,0,1,diamond(q(X)))",
        )
        .unwrap();
        let got = run_stream_naive(&program, &s, &["r".into()]).unwrap();
        assert!(got[3].1.contains(&parse_atom("r(1)").unwrap()));
        assert!(got[2].1.is_empty());
    }

    #[test]
    fn fixpoint_is_stable_under_reevaluation() {
        let s = stream(0, 2, &[(0, "e(1,2)"), (1, "e(2,3)")]);
        let program =
            parse_program("r(X,Y) :- time_win(2,0,1,diamond(e(X,Y))), r(X,Z) :- r(X,Y) and r(Y,Z)")
                .unwrap();
        let mut history = Stream::with_timeline(0, 2).unwrap();
        for now in 0..=2 {
            let first = evaluate_tick_naive(&program, &s, &history, now).unwrap();
            record(&mut history, &first);
            let again = evaluate_tick_naive(&program, &s, &history, now).unwrap();
            assert_eq!(first, again);
        }
    }

    #[test]
    fn rejects_future_windows() {
        let program = Program::new(vec![Rule {
            head: Head::Plain(parse_atom("q(X)").unwrap()),
            body: vec![Literal::Atom(ExtendedAtom::Windowed {
                spec: crate::model::WindowSpec {
                    kind: crate::model::WindowKind::Time,
                    past: 1,
                    future: 1,
                    step: 1,
                },
                op: TemporalOp::Diamond,
                atom: parse_atom("p(X)").unwrap(),
            })],
        }])
        .unwrap();
        let s = stream(0, 1, &[]);
        assert!(matches!(
            NaiveSession::new(&program, &s).err(),
            Some(EvalError::UnsupportedWindow(_))
        ));
    }
}
