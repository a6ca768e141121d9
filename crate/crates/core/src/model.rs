//! Terms, atoms, extended atoms, rules and programs.
//!
//! Everything here is immutable once built and cheap to clone: symbols are
//! reference-counted strings and numbers are plain `f64` values with
//! value-based equality.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

/// Interned-by-refcount identifier used for predicates, variables and symbolic constants.
pub type Symbol = Arc<str>;

/// Hands out one shared allocation per distinct name, so that equal symbols
/// usually compare by pointer.
#[derive(Debug, Default)]
pub struct Interner(std::collections::HashSet<Symbol>);

impl Interner {
    pub fn intern(&mut self, name: &str) -> Symbol {
        if let Some(s) = self.0.get(name) {
            return s.clone();
        }
        let s: Symbol = name.into();
        self.0.insert(s.clone());
        s
    }
}

/// A time point of a stream timeline.
pub type Time = u64;

/// A finite real constant. `3` and `3.0` are the same number.
#[derive(Clone, Copy, Debug)]
pub struct Number(f64);

impl Number {
    /// Returns `None` for NaN and infinities.
    pub fn new(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        // -0.0 and 0.0 must hash identically
        Some(Number(if value == 0.0 { 0.0 } else { value }))
    }

    pub fn from_time(t: Time) -> Self {
        Number(t as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The number as a time point, if it is a nonnegative integer.
    pub fn as_time(self) -> Option<Time> {
        if self.0 >= 0.0 && self.0.fract() == 0.0 && self.0 <= u64::MAX as f64 {
            Some(self.0 as Time)
        } else {
            None
        }
    }
}

impl PartialEq for Number {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl Eq for Number {}

impl Hash for Number {
    fn hash<H: Hasher>(&self, state: &mut H) {
        // small integers differ only in high bits, which multiplicative
        // hashers never carry downwards; fold them in
        let b = self.0.to_bits();
        (b ^ (b >> 29)).hash(state);
    }
}

impl PartialOrd for Number {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Number {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A term: variable, numeric constant or symbolic constant.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(Symbol),
    Num(Number),
    Sym(Symbol),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.into())
    }

    pub fn sym(name: &str) -> Self {
        Term::Sym(name.into())
    }

    /// Panics on non-finite input; use [`Number::new`] for fallible construction.
    pub fn num(value: f64) -> Self {
        Term::Num(Number::new(value).expect("finite number"))
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn as_number(&self) -> Option<Number> {
        match self {
            Term::Num(n) => Some(*n),
            _ => None,
        }
    }

    /// Resolves a variable through `s`; constants are returned unchanged.
    pub fn resolve<'a>(&'a self, s: &'a Substitution) -> Option<&'a Term> {
        match self {
            Term::Var(v) => s.get(v),
            other => Some(other),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Sym(v) => f.write_str(v),
            Term::Num(n) => n.fmt(f),
        }
    }
}

/// Ground terms serialize as JSON numbers (integral values as integers) or
/// strings; a variable becomes `?Name`.
impl serde::Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Term::Num(n) => {
                let v = n.value();
                if v.fract() == 0.0 && v.abs() < 9.0e15 {
                    s.serialize_i64(v as i64)
                } else {
                    s.serialize_f64(v)
                }
            }
            Term::Sym(v) => s.serialize_str(v),
            Term::Var(v) => s.serialize_str(&format!("?{v}")),
        }
    }
}

impl<'de> serde::Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Number::new(x)
                .map(Term::Num)
                .ok_or_else(|| serde::de::Error::custom("non-finite number")),
            Raw::Str(s) => Ok(match s.strip_prefix('?') {
                Some(v) if !v.is_empty() => Term::var(v),
                _ => Term::sym(&s),
            }),
        }
    }
}

/// `predicate(arg, ...)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: Symbol,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<Symbol>, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.into(),
            args,
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }

    pub fn variables(&self) -> impl Iterator<Item = &Symbol> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v),
            _ => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if self.args.is_empty() {
            return Ok(());
        }
        f.write_str("(")?;
        for (i, arg) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{arg}")?;
        }
        f.write_str(")")
    }
}

/// Serialized as `["predicate", arg, ...]`, the stream-file fact form.
impl serde::Serialize for Atom {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.args.len() + 1))?;
        seq.serialize_element(&*self.predicate)?;
        for a in &self.args {
            seq.serialize_element(a)?;
        }
        seq.end()
    }
}

impl<'de> serde::Deserialize<'de> for Atom {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut items = Vec::<Term>::deserialize(d)?.into_iter();
        match items.next() {
            Some(Term::Sym(p)) => Ok(Atom::new(p, items.collect())),
            _ => Err(serde::de::Error::custom(
                "fact must start with a predicate name",
            )),
        }
    }
}

/// A set of variable bindings to ground terms, kept sorted by variable name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Substitution {
    bindings: Vec<(Symbol, Term)>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, var: &str) -> Option<&Term> {
        // interned names usually match by address; the list is short
        if let Some((_, t)) = self.bindings.iter().find(|(v, _)| std::ptr::eq(&**v, var)) {
            return Some(t);
        }
        self.bindings
            .binary_search_by(|(v, _)| (**v).cmp(var))
            .ok()
            .map(|i| &self.bindings[i].1)
    }

    pub fn is_bound(&self, var: &str) -> bool {
        self.get(var).is_some()
    }

    /// Binds `var` to a ground `value`. Returns `false` (leaving `self`
    /// unchanged) if `var` is already bound to a different value.
    pub fn bind(&mut self, var: &Symbol, value: Term) -> bool {
        debug_assert!(!value.is_var());
        if let Some((_, t)) = self.bindings.iter().find(|(v, _)| Arc::ptr_eq(v, var)) {
            return *t == value;
        }
        match self.bindings.binary_search_by(|(v, _)| (**v).cmp(var)) {
            Ok(i) => self.bindings[i].1 == value,
            Err(i) => {
                self.bindings.insert(i, (var.clone(), value));
                true
            }
        }
    }

    pub fn with(mut self, var: &str, value: Term) -> Self {
        let var: Symbol = var.into();
        assert!(self.bind(&var, value), "conflicting binding for {var}");
        self
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Symbol, &Term)> {
        self.bindings.iter().map(|(v, t)| (v, t))
    }

    pub fn apply(&self, term: &Term) -> Term {
        match term {
            Term::Var(v) => self.get(v).cloned().unwrap_or_else(|| term.clone()),
            other => other.clone(),
        }
    }
}

impl FromIterator<(Symbol, Term)> for Substitution {
    fn from_iter<I: IntoIterator<Item = (Symbol, Term)>>(iter: I) -> Self {
        let mut s = Substitution::new();
        for (v, t) in iter {
            s.bind(&v, t);
        }
        s
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (v, t)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}->{t}")?;
        }
        f.write_str("}")
    }
}

/// Replaces every variable of `atom` bound in `s`; unbound variables stay.
pub fn substitute(atom: &Atom, s: &Substitution) -> Atom {
    Atom {
        predicate: atom.predicate.clone(),
        args: atom.args.iter().map(|t| s.apply(t)).collect(),
    }
}

/// One-sided unification of `pattern` against the ground `fact`, extending `s`.
///
/// Returns `None` when predicates or arities differ, a constant clashes, or a
/// binding would conflict with `s`.
pub fn match_fact(pattern: &Atom, fact: &Atom, s: &Substitution) -> Option<Substitution> {
    if pattern.predicate != fact.predicate || pattern.args.len() != fact.args.len() {
        return None;
    }
    let mut out = s.clone();
    for (p, f) in pattern.args.iter().zip(&fact.args) {
        match p {
            Term::Var(v) => {
                if !out.bind(v, f.clone()) {
                    return None;
                }
            }
            constant => {
                if constant != f {
                    return None;
                }
            }
        }
    }
    Some(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WindowKind {
    Time,
    Tuple,
}

/// Window operator parameters: `time_win(past, future, step, ..)` or
/// `tuple_win(count, 0, step, ..)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowSpec {
    pub kind: WindowKind,
    /// Time points into the past, or the tuple count for tuple windows.
    pub past: u64,
    pub future: u64,
    pub step: u64,
}

impl WindowSpec {
    pub fn time(past: u64) -> Self {
        WindowSpec {
            kind: WindowKind::Time,
            past,
            future: 0,
            step: 1,
        }
    }

    pub fn tuple(count: u64) -> Self {
        WindowSpec {
            kind: WindowKind::Tuple,
            past: count,
            future: 0,
            step: 1,
        }
    }
}

/// Temporal modality applied inside a window.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemporalOp {
    Diamond,
    Box,
    At(Term),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExtendedAtom {
    Plain(Atom),
    /// `@(t, a)` outside any window: evaluated over the whole history.
    At(Term, Atom),
    Windowed {
        spec: WindowSpec,
        op: TemporalOp,
        atom: Atom,
    },
}

impl ExtendedAtom {
    pub fn atom(&self) -> &Atom {
        match self {
            ExtendedAtom::Plain(a) | ExtendedAtom::At(_, a) => a,
            ExtendedAtom::Windowed { atom, .. } => atom,
        }
    }

    /// The `@` time term, if any.
    pub fn time_term(&self) -> Option<&Term> {
        match self {
            ExtendedAtom::At(t, _) => Some(t),
            ExtendedAtom::Windowed {
                op: TemporalOp::At(t),
                ..
            } => Some(t),
            _ => None,
        }
    }

    /// Variables this atom binds when matched.
    pub fn binds(&self) -> impl Iterator<Item = &Symbol> {
        let time_var = match self.time_term() {
            Some(Term::Var(v)) => Some(v),
            _ => None,
        };
        self.atom().variables().chain(time_var)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CompOp {
    Eq,
    Ne,
    Gt,
    Lt,
    Ge,
    Le,
    /// `s!=`: inequality of symbolic constants.
    SymNe,
}

impl CompOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CompOp::Eq => "==",
            CompOp::Ne => "!=",
            CompOp::Gt => ">",
            CompOp::Lt => "<",
            CompOp::Ge => ">=",
            CompOp::Le => "<=",
            CompOp::SymNe => "s!=",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "==" => CompOp::Eq,
            "!=" => CompOp::Ne,
            ">" => CompOp::Gt,
            "<" => CompOp::Lt,
            ">=" => CompOp::Ge,
            "<=" => CompOp::Le,
            "s!=" => CompOp::SymNe,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MathOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl MathOp {
    pub fn as_str(self) -> &'static str {
        match self {
            MathOp::Add => "+",
            MathOp::Sub => "-",
            MathOp::Mul => "*",
            MathOp::Div => "/",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "+" => MathOp::Add,
            "-" => MathOp::Sub,
            "*" => MathOp::Mul,
            "/" => MathOp::Div,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BuiltinAtom {
    Comp {
        op: CompOp,
        lhs: Term,
        rhs: Term,
    },
    /// `MATH(op, result, a, b)`: result = a op b.
    Math {
        op: MathOp,
        result: Term,
        a: Term,
        b: Term,
    },
}

impl BuiltinAtom {
    /// Variables that must be bound before the builtin can run.
    pub fn inputs(&self) -> Vec<&Symbol> {
        let terms: &[&Term] = match self {
            BuiltinAtom::Comp { lhs, rhs, .. } => &[lhs, rhs],
            BuiltinAtom::Math { a, b, .. } => &[a, b],
        };
        terms
            .iter()
            .filter_map(|t| match t {
                Term::Var(v) => Some(v),
                _ => None,
            })
            .collect()
    }

    /// The variable a `MATH` builtin may bind.
    pub fn output(&self) -> Option<&Symbol> {
        match self {
            BuiltinAtom::Math {
                result: Term::Var(v),
                ..
            } => Some(v),
            _ => None,
        }
    }
}

/// A body element.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Literal {
    Atom(ExtendedAtom),
    Builtin(BuiltinAtom),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Head {
    Plain(Atom),
    At(Term, Atom),
}

impl Head {
    pub fn atom(&self) -> &Atom {
        match self {
            Head::Plain(a) | Head::At(_, a) => a,
        }
    }

    pub fn variables(&self) -> impl Iterator<Item = &Symbol> {
        let time_var = match self {
            Head::At(Term::Var(v), _) => Some(v),
            _ => None,
        };
        self.atom().variables().chain(time_var)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Rule {
    pub head: Head,
    pub body: Vec<Literal>,
}

impl Rule {
    pub fn is_fact(&self) -> bool {
        self.body.is_empty()
    }

    /// Atoms of the body, skipping builtins.
    pub fn body_atoms(&self) -> impl Iterator<Item = &ExtendedAtom> {
        self.body.iter().filter_map(|l| match l {
            Literal::Atom(a) => Some(a),
            Literal::Builtin(_) => None,
        })
    }

    /// Checks safety: every head variable and every builtin input is bound by
    /// some body atom, `MATH` result or `==` against a bound term. Returns the
    /// first offending variable.
    pub fn unsafe_variable(&self) -> Option<Symbol> {
        let mut bound: BTreeSet<&Symbol> = self.body_atoms().flat_map(|a| a.binds()).collect();
        let builtins: Vec<&BuiltinAtom> = self
            .body
            .iter()
            .filter_map(|l| match l {
                Literal::Builtin(b) => Some(b),
                _ => None,
            })
            .collect();
        // MATH results bind once their inputs are bound, as does one side of
        // `==` once the other is; iterate to closure
        let mut done = vec![false; builtins.len()];
        loop {
            let mut progressed = false;
            for (i, b) in builtins.iter().enumerate() {
                if done[i] {
                    continue;
                }
                if let BuiltinAtom::Comp {
                    op: CompOp::Eq,
                    lhs,
                    rhs,
                } = b
                {
                    let known = |t: &Term| !matches!(t, Term::Var(v) if !bound.contains(v));
                    let fresh = match (known(lhs), known(rhs), lhs, rhs) {
                        (false, true, Term::Var(v), _) | (true, false, _, Term::Var(v)) => Some(v),
                        _ => None,
                    };
                    if let Some(v) = fresh {
                        bound.insert(v);
                        done[i] = true;
                        progressed = true;
                        continue;
                    }
                }
                if b.inputs().iter().all(|v| bound.contains(v)) {
                    done[i] = true;
                    progressed = true;
                    if let Some(out) = b.output() {
                        bound.insert(out);
                    }
                }
            }
            if !progressed {
                break;
            }
        }
        for (i, b) in builtins.iter().enumerate() {
            if !done[i] {
                if let Some(v) = b.inputs().into_iter().find(|v| !bound.contains(v)) {
                    return Some(v.clone());
                }
            }
        }
        self.head.variables().find(|v| !bound.contains(v)).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error(
        "predicate `{predicate}` used with arity {found} but previously with arity {expected}"
    )]
    ArityConflict {
        predicate: Symbol,
        expected: usize,
        found: usize,
    },
    #[error("unsafe variable `{variable}` in rule `{rule}`")]
    UnsafeVariable { variable: Symbol, rule: String },
}

/// A set of rules with a consistent predicate signature.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    pub rules: Vec<Rule>,
    pub predicates: BTreeMap<Symbol, usize>,
}

impl Program {
    pub fn new(rules: Vec<Rule>) -> Result<Self, ProgramError> {
        let mut program = Program::default();
        for rule in rules {
            program.push(rule)?;
        }
        Ok(program)
    }

    pub fn push(&mut self, rule: Rule) -> Result<(), ProgramError> {
        if let Some(variable) = rule.unsafe_variable() {
            return Err(ProgramError::UnsafeVariable {
                variable,
                rule: crate::parser::format_rule(&rule),
            });
        }
        let mut signature = self.predicates.clone();
        let atoms = std::iter::once(rule.head.atom()).chain(rule.body_atoms().map(|a| a.atom()));
        for atom in atoms {
            register_arity(&mut signature, atom)?;
        }
        self.predicates = signature;
        self.rules.push(rule);
        Ok(())
    }

    /// Appends the rules of `other` (typically background facts).
    pub fn merge(&mut self, other: &Program) -> Result<(), ProgramError> {
        for rule in &other.rules {
            self.push(rule.clone())?;
        }
        Ok(())
    }

    pub fn arity(&self, predicate: &str) -> Option<usize> {
        self.predicates.get(predicate).copied()
    }

    /// Predicates that appear in some rule head.
    pub fn derived_predicates(&self) -> BTreeSet<Symbol> {
        self.rules
            .iter()
            .map(|r| r.head.atom().predicate.clone())
            .collect()
    }

    /// Every window spec used in a rule body.
    pub fn windows(&self) -> impl Iterator<Item = WindowSpec> + '_ {
        self.rules.iter().flat_map(|r| {
            r.body_atoms().filter_map(|a| match a {
                ExtendedAtom::Windowed { spec, .. } => Some(*spec),
                _ => None,
            })
        })
    }

    /// Largest time-window length; 0 if the program has no time windows.
    pub fn max_time_window(&self) -> u64 {
        self.windows()
            .filter(|w| w.kind == WindowKind::Time)
            .map(|w| w.past)
            .max()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub(crate) fn register_arity(
    signature: &mut BTreeMap<Symbol, usize>,
    atom: &Atom,
) -> Result<(), ProgramError> {
    match signature.get(&atom.predicate) {
        Some(&expected) if expected != atom.arity() => Err(ProgramError::ArityConflict {
            predicate: atom.predicate.clone(),
            expected,
            found: atom.arity(),
        }),
        Some(_) => Ok(()),
        None => {
            signature.insert(atom.predicate.clone(), atom.arity());
            Ok(())
        }
    }
}
