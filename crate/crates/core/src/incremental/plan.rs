//! Compiling rules into slot-indexed join plans and stratifying them.

use std::collections::BTreeSet;

use rustc_hash::FxHashMap as HashMap;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::model::{
    Atom, BuiltinAtom, CompOp, ExtendedAtom, Head, Literal, MathOp, Program, Rule, Symbol,
    TemporalOp, Term, WindowKind,
};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) enum Slot {
    Var(usize),
    Const(Term),
}

/// How a body atom looks at its predicate's history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum View {
    Now,
    Diamond(u64),
    Box(u64),
    At(u64),
    /// `@` outside any window: the whole history.
    AtAll,
    Tuple(u64, TupleOp),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum TupleOp {
    Diamond,
    Box,
    At,
}

impl View {
    /// Past time points this view needs retained, beyond `now` itself.
    pub(crate) fn retention(self) -> Option<u64> {
        match self {
            View::Now => Some(1),
            View::Diamond(p) | View::Box(p) | View::At(p) => Some(p + 1),
            View::AtAll => None,
            View::Tuple(..) => Some(0),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Step {
    Match {
        pred: usize,
        view: View,
        args: Vec<Slot>,
        time: Option<Slot>,
    },
    Comp {
        op: CompOp,
        lhs: Slot,
        rhs: Slot,
    },
    Math {
        op: MathOp,
        result: Slot,
        a: Slot,
        b: Slot,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct CompiledRule {
    pub head_pred: Symbol,
    pub head_args: Vec<Slot>,
    pub head_time: Option<Slot>,
    pub steps: Vec<Step>,
    pub vars: usize,
    /// Distinct `(predicate, view)` pairs read by the body.
    pub formulas: BTreeSet<(usize, View)>,
    pub volatile: bool,
}

impl CompiledRule {
    pub fn is_at_head(&self) -> bool {
        self.head_time.is_some()
    }
}

pub(crate) struct Plan {
    /// Predicates read by some rule body; indices into this list name stores.
    pub preds: Vec<Symbol>,
    pub rules: Vec<CompiledRule>,
    /// Rule indices grouped by component, in dependency order.
    pub strata: Vec<Stratum>,
    pub max_tuple: u64,
}

pub(crate) struct Stratum {
    pub rules: Vec<usize>,
    pub recursive: bool,
}

struct Compiler<'a> {
    vars: HashMap<&'a str, usize>,
    bound: Vec<bool>,
}

impl<'a> Compiler<'a> {
    fn slot(&mut self, t: &'a Term) -> Slot {
        match t {
            Term::Var(v) => {
                let next = self.vars.len();
                let i = *self.vars.entry(v).or_insert(next);
                if i == self.bound.len() {
                    self.bound.push(false);
                }
                Slot::Var(i)
            }
            other => Slot::Const(other.clone()),
        }
    }

    fn is_bound(&self, t: &Term) -> bool {
        match t {
            Term::Var(v) => self.vars.get(&**v).is_some_and(|&i| self.bound[i]),
            _ => true,
        }
    }

    fn mark(&mut self, slot: &Slot) {
        if let Slot::Var(i) = slot {
            self.bound[*i] = true;
        }
    }

    fn builtin(&mut self, b: &'a BuiltinAtom) -> Step {
        match b {
            BuiltinAtom::Comp { op, lhs, rhs } => {
                let step = Step::Comp {
                    op: *op,
                    lhs: self.slot(lhs),
                    rhs: self.slot(rhs),
                };
                if let Step::Comp { lhs, rhs, .. } = &step {
                    let (l, r) = (lhs.clone(), rhs.clone());
                    self.mark(&l);
                    self.mark(&r);
                }
                step
            }
            BuiltinAtom::Math { op, result, a, b } => {
                let step = Step::Math {
                    op: *op,
                    a: self.slot(a),
                    b: self.slot(b),
                    result: self.slot(result),
                };
                if let Step::Math { result, .. } = &step {
                    let r = result.clone();
                    self.mark(&r);
                }
                step
            }
        }
    }

    /// Inputs bound, or an equality with one bound side (it then binds the
    /// other).
    fn ready(&self, b: &BuiltinAtom) -> bool {
        match b {
            BuiltinAtom::Comp {
                op: CompOp::Eq,
                lhs,
                rhs,
            } => self.is_bound(lhs) || self.is_bound(rhs),
            BuiltinAtom::Comp { lhs, rhs, .. } => self.is_bound(lhs) && self.is_bound(rhs),
            BuiltinAtom::Math { a, b, .. } => self.is_bound(a) && self.is_bound(b),
        }
    }

    fn flush(&mut self, pending: &mut Vec<&'a BuiltinAtom>, steps: &mut Vec<Step>) {
        while let Some(i) = pending.iter().position(|b| self.ready(b)) {
            let b = pending.remove(i);
            steps.push(self.builtin(b));
        }
    }
}

fn view_of(ea: &ExtendedAtom) -> (View, &Atom, Option<&Term>) {
    match ea {
        ExtendedAtom::Plain(a) => (View::Now, a, None),
        ExtendedAtom::At(t, a) => (View::AtAll, a, Some(t)),
        ExtendedAtom::Windowed { spec, op, atom } => {
            let view = match (spec.kind, op) {
                (WindowKind::Time, TemporalOp::Diamond) => View::Diamond(spec.past),
                (WindowKind::Time, TemporalOp::Box) => View::Box(spec.past),
                (WindowKind::Time, TemporalOp::At(_)) => View::At(spec.past),
                (WindowKind::Tuple, TemporalOp::Diamond) => {
                    View::Tuple(spec.past, TupleOp::Diamond)
                }
                (WindowKind::Tuple, TemporalOp::Box) => View::Tuple(spec.past, TupleOp::Box),
                (WindowKind::Tuple, TemporalOp::At(_)) => View::Tuple(spec.past, TupleOp::At),
            };
            let time = match op {
                TemporalOp::At(t) => Some(t),
                _ => None,
            };
            (view, atom, time)
        }
    }
}

fn compile_rule(rule: &Rule, pred_index: &HashMap<Symbol, usize>) -> CompiledRule {
    let mut c = Compiler {
        vars: HashMap::default(),
        bound: Vec::new(),
    };
    let mut steps = Vec::new();
    let mut pending: Vec<&BuiltinAtom> = rule
        .body
        .iter()
        .filter_map(|l| match l {
            Literal::Builtin(b) => Some(b),
            Literal::Atom(_) => None,
        })
        .collect();
    let mut formulas = BTreeSet::new();
    let mut volatile = false;
    c.flush(&mut pending, &mut steps);
    for lit in &rule.body {
        let Literal::Atom(ea) = lit else { continue };
        let (view, atom, time) = view_of(ea);
        let pred = pred_index[&atom.predicate];
        let args: Vec<Slot> = atom.args.iter().map(|t| c.slot(t)).collect();
        let time = time.map(|t| c.slot(t));
        for s in args.iter().chain(time.iter()) {
            c.mark(s);
        }
        volatile |= matches!(view, View::Tuple(..));
        formulas.insert((pred, view));
        steps.push(Step::Match {
            pred,
            view,
            args,
            time,
        });
        c.flush(&mut pending, &mut steps);
    }
    // safe programs leave nothing pending; keep any leftovers so that they fail
    for b in pending {
        steps.push(c.builtin(b));
    }
    let (head_atom, head_time) = match &rule.head {
        Head::Plain(a) => (a, None),
        Head::At(t, a) => (a, Some(c.slot(t))),
    };
    let head_args = head_atom.args.iter().map(|t| c.slot(t)).collect();
    CompiledRule {
        head_pred: head_atom.predicate.clone(),
        head_args,
        head_time,
        steps,
        vars: c.vars.len(),
        formulas,
        volatile,
    }
}

pub(crate) fn compile(program: &Program) -> Plan {
    let mut preds: Vec<Symbol> = Vec::new();
    let mut pred_index: HashMap<Symbol, usize> = HashMap::default();
    let mut max_tuple = 0;
    for rule in &program.rules {
        for ea in rule.body_atoms() {
            let p = &ea.atom().predicate;
            if !pred_index.contains_key(p) {
                pred_index.insert(p.clone(), preds.len());
                preds.push(p.clone());
            }
            if let ExtendedAtom::Windowed { spec, .. } = ea {
                if spec.kind == WindowKind::Tuple {
                    max_tuple = max_tuple.max(spec.past);
                }
            }
        }
    }
    let rules: Vec<CompiledRule> = program
        .rules
        .iter()
        .map(|r| compile_rule(r, &pred_index))
        .collect();

    // predicate dependency graph over all predicates that appear in rules
    let mut graph: DiGraph<Symbol, ()> = DiGraph::new();
    let mut nodes: HashMap<Symbol, NodeIndex> = HashMap::default();
    let mut node = |g: &mut DiGraph<Symbol, ()>, p: &Symbol| {
        *nodes
            .entry(p.clone())
            .or_insert_with(|| g.add_node(p.clone()))
    };
    let mut self_loops = BTreeSet::new();
    for rule in &program.rules {
        let h = node(&mut graph, &rule.head.atom().predicate);
        for ea in rule.body_atoms() {
            let b = node(&mut graph, &ea.atom().predicate);
            graph.update_edge(b, h, ());
            if b == h {
                self_loops.insert(h);
            }
        }
    }
    let mut scc = tarjan_scc(&graph);
    // tarjan yields reverse topological order
    scc.reverse();
    let mut strata = Vec::new();
    for component in scc {
        let members: BTreeSet<&Symbol> = component.iter().map(|&n| &graph[n]).collect();
        let rules_here: Vec<usize> = program
            .rules
            .iter()
            .enumerate()
            .filter(|(_, r)| members.contains(&r.head.atom().predicate))
            .map(|(i, _)| i)
            .collect();
        if rules_here.is_empty() {
            continue;
        }
        let recursive = component.len() > 1 || self_loops.contains(&component[0]);
        strata.push(Stratum {
            rules: rules_here,
            recursive,
        });
    }
    Plan {
        preds,
        rules,
        strata,
        max_tuple,
    }
}
