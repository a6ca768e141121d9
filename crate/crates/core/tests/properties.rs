use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use larstream::incremental::run_stream_incremental;
use larstream::io::{read_stream, write_stream};
use larstream::model::{Atom, Substitution, Symbol, TemporalOp, Term, Time, WindowSpec};
use larstream::naive::run_stream_naive;
use larstream::parser::{format_program, parse_program};
use larstream::stream::Stream;
use larstream::window::{eval_temporal, window_view};

const VALUES: [&str; 5] = ["0", "1", "2", "3", "a"];

/// (name, arity, derived)
const PREDICATES: [(&str, usize, bool); 5] = [
    ("p", 1, false),
    ("r", 2, false),
    ("d0", 1, true),
    ("d1", 2, true),
    ("d2", 1, true),
];

fn random_stream(rng: &mut ChaCha8Rng, ticks: Time) -> Stream {
    let mut s = Stream::with_timeline(0, ticks - 1).unwrap();
    for t in 0..ticks {
        for _ in 0..rng.gen_range(0..4) {
            let atom = if rng.gen_bool(0.5) {
                format!("p({})", VALUES.choose(rng).unwrap())
            } else {
                format!(
                    "r({}, {})",
                    VALUES.choose(rng).unwrap(),
                    VALUES.choose(rng).unwrap()
                )
            };
            s.insert(t, larstream::parser::parse_atom(&atom).unwrap())
                .unwrap();
        }
    }
    s
}

/// A random safe rule in the surface syntax.
fn random_rule(rng: &mut ChaCha8Rng, fresh: &mut usize) -> String {
    let mut var = |prefix: &str| {
        *fresh += 1;
        format!("{prefix}{fresh}")
    };
    let mut body = Vec::new();
    let mut bound: Vec<String> = Vec::new();
    let mut times: Vec<String> = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let (name, arity, _) = *PREDICATES.choose(rng).unwrap();
        let args: Vec<String> = (0..arity)
            .map(|_| {
                if !bound.is_empty() && rng.gen_bool(0.4) {
                    bound.choose(rng).unwrap().clone()
                } else if rng.gen_bool(0.2) {
                    VALUES.choose(rng).unwrap().to_string()
                } else {
                    var("V")
                }
            })
            .collect();
        let atom = format!("{name}({})", args.join(", "));
        let window = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.15) {
                format!("tuple_win({}, 0, 1", rng.gen_range(1..5))
            } else {
                format!("time_win({}, 0, 1", rng.gen_range(0..5))
            }
        };
        let text = match rng.gen_range(0..6) {
            0 => atom.clone(),
            1 => {
                let t = var("T");
                times.push(t.clone());
                format!("@({t}, {atom})")
            }
            2 => format!("{}, diamond({atom}))", window(rng)),
            3 => format!("{}, box({atom}))", window(rng)),
            _ => {
                let t = var("T");
                times.push(t.clone());
                format!("{}, @({t}, {atom}))", window(rng))
            }
        };
        body.push(text);
        for a in args {
            if a.starts_with('V') && !bound.contains(&a) {
                bound.push(a);
            }
        }
    }
    bound.extend(times.iter().cloned());
    for _ in 0..rng.gen_range(0..3) {
        let Some(x) = bound.choose(rng).cloned() else {
            break;
        };
        match rng.gen_range(0..4) {
            0 => {
                let op = ["<", "<=", ">", ">=", "==", "!=", "s!="]
                    .choose(rng)
                    .unwrap();
                let rhs = if rng.gen_bool(0.5) {
                    VALUES.choose(rng).unwrap().to_string()
                } else {
                    bound.choose(rng).unwrap().clone()
                };
                body.push(format!("COMP({op}, {x}, {rhs})"));
            }
            1 => {
                // arithmetic results stay out of heads: recursion through
                // them would have an infinite least model
                let w = var("W");
                let op = ["+", "-", "*", "/"].choose(rng).unwrap();
                body.push(format!("MATH({op}, {w}, {x}, {})", rng.gen_range(0..3)));
                bound.push(w);
            }
            2 => {
                let w = format!("{}{}", if x.starts_with('W') { "W" } else { "E" }, var(""));
                body.push(format!("COMP(==, {w}, {x})"));
                bound.push(w);
            }
            _ => {}
        }
    }
    // builtins may precede the atoms that bind them
    if rng.gen_bool(0.3) {
        body.shuffle(rng);
    }
    let heads: Vec<_> = PREDICATES.iter().filter(|p| p.2).collect();
    let (name, arity, _) = **heads.choose(rng).unwrap();
    let args: Vec<String> = (0..arity)
        .map(|_| {
            match bound
                .iter()
                .filter(|v| !v.starts_with('W'))
                .collect::<Vec<_>>()
                .choose(rng)
            {
                Some(v) if rng.gen_bool(0.85) => (*v).clone(),
                _ => VALUES.choose(rng).unwrap().to_string(),
            }
        })
        .collect();
    let head = format!("{name}({})", args.join(", "));
    let head = match times.choose(rng) {
        Some(t) if rng.gen_bool(0.3) => format!("@({t}, {head})"),
        _ => head,
    };
    format!("{head} :- {}", body.join(" and "))
}

fn random_program(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fresh = 0;
    let mut rules: Vec<String> = (0..rng.gen_range(1..=5))
        .map(|_| random_rule(&mut rng, &mut fresh))
        .collect();
    if rng.gen_bool(0.3) {
        rules.push(format!("d2({}) :-", VALUES.choose(&mut rng).unwrap()));
    }
    rules.join(",\n")
}

fn derived() -> Vec<Symbol> {
    PREDICATES
        .iter()
        .filter(|p| p.2)
        .map(|p| Symbol::from(p.0))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn engines_agree_on_random_programs(seed in any::<u64>(), stream_seed in any::<u64>(), ticks in 1u64..14) {
        let text = random_program(seed);
        let program = parse_program(&text).map_err(|e| TestCaseError::fail(format!("{}\n{text}", e.render())))?;
        let stream = random_stream(&mut ChaCha8Rng::seed_from_u64(stream_seed), ticks);
        let naive = run_stream_naive(&program, &stream, &derived()).unwrap();
        let inc = run_stream_incremental(&program, &stream, &derived()).unwrap();
        prop_assert_eq!(naive, inc, "program:\n{}", text);
    }

    #[test]
    fn format_then_parse_is_identity(seed in any::<u64>()) {
        let text = random_program(seed);
        let first = parse_program(&text).map_err(|e| TestCaseError::fail(e.render()))?;
        let printed = format_program(&first);
        let second = parse_program(&printed).map_err(|e| TestCaseError::fail(e.render()))?;
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(printed, format_program(&second));
    }

    #[test]
    fn stream_files_round_trip(seed in any::<u64>(), ticks in 1u64..10, scale in -3i32..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = random_stream(&mut rng, ticks);
        for t in 0..ticks {
            let v = rng.gen_range(-1000i64..1000) as f64 * 10f64.powi(scale) + 0.1;
            s.insert(t, Atom::new("x", vec![Term::num(v), Term::sym("m n"), Term::sym("?odd")])).unwrap();
        }
        let mut buf = Vec::new();
        write_stream(&s, &mut buf).unwrap();
        let back = read_stream(buf.as_slice(), "round trip").unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn windows_match_timeline_enumeration(
        seed in any::<u64>(),
        ticks in 1u64..12,
        past in 0u64..6,
        tuple in any::<bool>(),
        op in 0usize..4,
        pinned in proptest::option::of(0usize..4),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream = random_stream(&mut rng, ticks);
        let now = rng.gen_range(0..ticks);
        let spec = if tuple { WindowSpec::tuple(past + 1) } else { WindowSpec::time(past) };
        let arg = match pinned {
            Some(i) => Term::sym(VALUES[i]).canonical(),
            None => Term::var("X"),
        };
        let pattern = Atom::new("p", vec![arg]);
        let at_time = rng.gen_range(0..ticks);
        let temporal = match op {
            0 => TemporalOp::Diamond,
            1 => TemporalOp::Box,
            2 => TemporalOp::At(Term::var("T")),
            _ => TemporalOp::At(Term::num(at_time as f64)),
        };
        let view = window_view(&stream, now, &spec).unwrap();
        let got: BTreeSet<Substitution> = eval_temporal(&view, &temporal, &pattern, &Substitution::new()).into_iter().collect();

        // the window as an explicit list of (time, atom) pairs
        let mut all: Vec<(Time, Atom)> = Vec::new();
        for t in 0..=now {
            for a in stream.atoms_at(t) {
                all.push((t, a));
            }
        }
        let (start, visible): (Time, Vec<(Time, Atom)>) = if tuple {
            let n = (past + 1) as usize;
            let kept = all[all.len().saturating_sub(n)..].to_vec();
            let start = if all.len() < n { 0 } else { kept.first().map_or(0, |x| x.0) };
            (start, kept)
        } else {
            let start = now.saturating_sub(past);
            (start, all.into_iter().filter(|(t, _)| *t >= start).collect())
        };
        let holds = |t: Time, a: &Atom| visible.iter().any(|(u, b)| *u == t && b == a);
        let candidates: BTreeSet<Atom> = visible.iter().map(|(_, a)| a.clone()).filter(|a| a.predicate.as_ref() == "p").collect();
        let mut want = BTreeSet::new();
        for a in &candidates {
            let Some(s) = larstream::model::match_fact(&pattern, a, &Substitution::new()) else { continue };
            match &temporal {
                TemporalOp::Diamond => {
                    if (start..=now).any(|t| holds(t, a)) { want.insert(s); }
                }
                TemporalOp::Box => {
                    if (start..=now).all(|t| holds(t, a)) { want.insert(s); }
                }
                TemporalOp::At(Term::Var(_)) => {
                    for t in start..=now {
                        if holds(t, a) { want.insert(s.clone().with("T", Term::num(t as f64))); }
                    }
                }
                TemporalOp::At(_) => {
                    if (start..=now).contains(&at_time) && holds(at_time, a) { want.insert(s); }
                }
            }
        }
        prop_assert_eq!(got, want);
    }
}

trait Canonical {
    fn canonical(self) -> Term;
}

impl Canonical for Term {
    /// Digits become numbers, as the parser would read them.
    fn canonical(self) -> Term {
        match &self {
            Term::Sym(s) => s.parse::<f64>().map(Term::num).unwrap_or(self),
            _ => self,
        }
    }
}
