use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use proptest::prelude::*;

use larstream::dataset::{
    build_dataset, export_dataset, read_dataset, Dataset, FeatureSchema, Format, Label, LabelSpec,
    Split,
};
use larstream::io::generate_synthetic;
use larstream::model::{Atom, Term, Time};
use larstream::naive::run_stream_naive;
use larstream::query::{FeatureSpec, Query};
use larstream::stream::Stream;

fn load(name: &str) -> Query {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../queries");
    Query::load(&dir.join(format!("{name}.toml"))).unwrap()
}

type Slot = (Term, String, Vec<Term>);

/// The reading `(slot, value)` an atom contributes under `spec`, if any.
fn reading(spec: &FeatureSpec, atom: &Atom) -> Option<(Slot, f64)> {
    if *atom.predicate != *spec.predicate {
        return None;
    }
    let value = atom.args.get(spec.value_arg)?.as_number()?.value();
    let sector = atom.args.get(spec.sector_arg)?.clone();
    let key = spec
        .key_args
        .iter()
        .map(|&i| atom.args.get(i).cloned())
        .collect::<Option<Vec<_>>>()?;
    Some(((sector, spec.predicate.clone(), key), value))
}

/// Per tick and slot, the mean of the readings.
fn tick_means(stream: &Stream, specs: &[FeatureSpec]) -> BTreeMap<Time, BTreeMap<Slot, f64>> {
    let mut out = BTreeMap::new();
    for t in stream.timeline().unwrap().iter() {
        let mut acc: BTreeMap<Slot, (f64, u32)> = BTreeMap::new();
        for atom in stream.facts_at(t).into_iter().flat_map(|f| f.iter()) {
            for spec in specs {
                if let Some((slot, v)) = reading(spec, atom) {
                    let e = acc.entry(slot).or_default();
                    e.0 += v;
                    e.1 += 1;
                }
            }
        }
        out.insert(
            t,
            acc.into_iter()
                .map(|(k, (s, n))| (k, s / n as f64))
                .collect(),
        );
    }
    out
}

/// Raw `w x n` window ending at `t`, columns in `columns` order.
fn raw_window(
    means: &BTreeMap<Time, BTreeMap<Slot, f64>>,
    columns: &[Slot],
    w: usize,
    t: Time,
) -> Vec<Vec<f64>> {
    (t + 1 - w as Time..=t)
        .map(|u| {
            columns
                .iter()
                .map(|c| means[&u].get(c).copied().unwrap_or(0.0))
                .collect()
        })
        .collect()
}

fn slots(schema: &FeatureSchema) -> Vec<Slot> {
    schema
        .columns
        .iter()
        .map(|c| (c.sector.clone(), c.predicate.to_string(), c.key.clone()))
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn build(q: &Query, ticks: u64, seed: u64) -> (Stream, Vec<(Time, BTreeSet<Atom>)>, Dataset) {
    let mut cfg = q.config.synthetic.clone();
    cfg.ticks = ticks;
    cfg.seed = seed;
    let stream = generate_synthetic(&cfg);
    let answers = run_stream_naive(&q.program, &stream, &q.outputs()).unwrap();
    let schema = FeatureSchema::discover(&stream, &q.config.features, q.config.task.window);
    let d = build_dataset(
        &q.config.name,
        &stream,
        &answers,
        schema,
        LabelSpec::from_config(&q.config.task),
        0.8,
        0.2,
    )
    .unwrap();
    (stream, answers, d)
}

#[test]
fn features_are_standardized_windows_of_direct_readings() {
    for name in ["q1", "q2", "q3", "q4", "q5"] {
        let q = load(name);
        let (stream, _, d) = build(&q, 160, 31);
        let w = q.config.task.window;
        let means = tick_means(&stream, &q.config.features);
        let discovered: BTreeSet<Slot> = means.values().flat_map(|m| m.keys().cloned()).collect();
        let columns = slots(&d.meta.schema);
        assert_eq!(
            columns.iter().cloned().collect::<BTreeSet<_>>(),
            discovered,
            "{name}: columns"
        );
        assert_eq!(columns.len(), discovered.len(), "{name}: duplicate columns");

        let raw: Vec<Vec<Vec<f64>>> = d
            .samples
            .iter()
            .map(|s| raw_window(&means, &columns, w, s.t))
            .collect();
        let train: Vec<&Vec<Vec<f64>>> = raw
            .iter()
            .zip(&d.samples)
            .filter(|(_, s)| s.split == Split::Train)
            .map(|(r, _)| r)
            .collect();
        let rows = (train.len() * w) as f64;
        let p = &d.meta.standardization;
        for c in 0..columns.len() {
            let mean = train
                .iter()
                .flat_map(|m| m.iter().map(|r| r[c]))
                .sum::<f64>()
                / rows;
            let var = train
                .iter()
                .flat_map(|m| m.iter().map(|r| (r[c] - mean).powi(2)))
                .sum::<f64>()
                / rows;
            assert!(
                close(p.mean[c], mean),
                "{name} column {c}: mean {} vs {mean}",
                p.mean[c]
            );
            assert!(
                close(p.std[c], var.sqrt()),
                "{name} column {c}: std {} vs {}",
                p.std[c],
                var.sqrt()
            );
            for (s, r) in d.samples.iter().zip(&raw) {
                for (i, row) in r.iter().enumerate() {
                    let want = if p.constant[c] {
                        0.0
                    } else {
                        (row[c] - mean) / var.sqrt()
                    };
                    let got = s.features.get(i, c);
                    assert!(
                        (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                        "{name} t={} row {i} col {c}: {got} vs {want}",
                        s.t
                    );
                }
            }
        }
    }
}

fn universe_index(universe: &[i64], e: &Term) -> usize {
    let v = e.as_number().unwrap().value() as i64;
    universe.iter().position(|u| *u == v).unwrap()
}

#[test]
fn labels_follow_the_task_conventions() {
    let universe: Vec<i64> = (1..=10).collect();
    let at = |answers: &[(Time, BTreeSet<Atom>)], t: Time| {
        answers.iter().find(|(u, _)| *u == t).unwrap().1.clone()
    };

    let (_, answers, d) = build(&load("q1"), 200, 8);
    for s in &d.samples {
        let want = if at(&answers, s.t).is_empty() {
            0.0
        } else {
            1.0
        };
        assert_eq!(s.label, Label::Scalar(want), "q1 t={}", s.t);
    }

    // every sector named by a pair is marked
    let (_, answers, d) = build(&load("q2"), 200, 8);
    for s in &d.samples {
        let mut bits = vec![0.0; 10];
        for a in at(&answers, s.t) {
            for e in &a.args[..2] {
                bits[universe_index(&universe, e)] = 1.0;
            }
        }
        assert_eq!(s.label, Label::Vector(bits), "q2 t={}", s.t);
    }

    // the later class wins; 3 means none
    let q3 = load("q3");
    let classes = ["urban_box", "highway_box", "industrial_box"];
    for seed in [8, 9, 10] {
        let (_, answers, d) = build(&q3, 200, seed);
        for s in &d.samples {
            let mut want = vec![3.0; 10];
            for a in at(&answers, s.t) {
                let class = classes.iter().position(|c| *c == &*a.predicate).unwrap() as f64;
                let slot = &mut want[universe_index(&universe, &a.args[0])];
                if *slot == 3.0 || class > *slot {
                    *slot = class;
                }
            }
            assert_eq!(s.label, Label::Vector(want), "q3 seed {seed} t={}", s.t);
        }
    }

    let (_, answers, d) = build(&load("q5"), 200, 8);
    for s in &d.samples {
        let mut bits = vec![0.0; 3];
        for a in at(&answers, s.t) {
            bits[universe_index(&[3, 4, 6], &a.args[0])] = 1.0;
        }
        assert_eq!(s.label, Label::Vector(bits), "q5 t={}", s.t);
    }
}

#[test]
fn export_is_deterministic() {
    let q = load("q4");
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = (0..2)
        .map(|i| dir.path().join(format!("d{i}.csv")))
        .collect();
    for p in &paths {
        let (_, _, d) = build(&q, 120, 77);
        export_dataset(&d, p, Format::Csv).unwrap();
    }
    let bytes = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(bytes(&paths[0]), bytes(&paths[1]));
    assert_eq!(
        bytes(&larstream::dataset::meta_path(&paths[0])),
        bytes(&larstream::dataset::meta_path(&paths[1]))
    );
}

/// Per-tick `(key, sector, value)` readings, per-tick output flags, window,
/// train and validation fractions.
type Case = (Vec<Vec<(u8, u8, i16)>>, Vec<bool>, usize, f64, f64);

fn random_case() -> impl Strategy<Value = Case> {
    (2usize..40).prop_flat_map(|ticks| {
        (
            prop::collection::vec(
                prop::collection::vec((0u8..2, 1u8..4, -50i16..50), 0..5),
                ticks,
            ),
            prop::collection::vec(any::<bool>(), ticks),
            1usize..=ticks.min(5),
            0.3f64..0.95,
            prop_oneof![Just(0.0), 0.05f64..0.5],
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn random_datasets_split_standardize_and_round_trip(case in random_case()) {
        let (facts, flags, w, train_frac, val_frac) = case;
        let ticks = facts.len() as Time;
        let mut stream = Stream::with_timeline(0, ticks - 1).unwrap();
        let mut answers = Vec::new();
        for (t, (tick, flag)) in facts.iter().zip(&flags).enumerate() {
            for &(k, s, v) in tick {
                let key = Term::sym(["a", "b"][k as usize]);
                stream.insert(t as Time, Atom::new("m", vec![key, Term::num(v as f64 / 4.0), Term::num(s as f64)])).unwrap();
            }
            let out: BTreeSet<Atom> = if *flag { [Atom::new("o", vec![Term::num(1.0)])].into() } else { BTreeSet::new() };
            answers.push((t as Time, out));
        }
        let specs = vec![FeatureSpec { predicate: "m".into(), value_arg: 1, sector_arg: 2, key_args: vec![0] }];
        let schema = FeatureSchema::discover(&stream, &specs, w);
        let labels = LabelSpec { task: larstream::dataset::TaskKind::Count, universe: vec![], entity_args: vec![], classes: vec![] };
        let d = match build_dataset("r", &stream, &answers, schema, labels, train_frac, val_frac) {
            Ok(d) => d,
            Err(e) => {
                // only too-small splits may be refused
                let train = ((ticks as usize + 1 - w) as f64 * train_frac + 1e-9).floor() as usize;
                prop_assert!(train == 0 || train == ticks as usize + 1 - w, "{e}");
                return Ok(());
            }
        };
        let n = ticks as usize + 1 - w;
        prop_assert_eq!(d.samples.len(), n);
        let total = (n as f64 * train_frac + 1e-9).floor() as usize;
        let val = (total as f64 * val_frac + 1e-9).floor() as usize;
        prop_assert_eq!((d.meta.splits.train + d.meta.splits.val, d.meta.splits.val), (total, val));
        prop_assert_eq!(d.meta.splits.test, n - total);

        // chronological and contiguous
        let order: Vec<(Time, Split)> = d.samples.iter().map(|s| (s.t, s.split)).collect();
        prop_assert!(order.windows(2).all(|p| p[0].0 + 1 == p[1].0 && p[0].1 <= p[1].1));
        prop_assert_eq!(order[0].0, (w - 1) as Time);
        prop_assert_eq!(d.meta.label_histogram.values().sum::<usize>(), n);
        for s in &d.samples {
            prop_assert_eq!(&s.label, &Label::Scalar(if flags[s.t as usize] { 1.0 } else { 0.0 }));
        }

        // standardized training columns are centred with unit deviation
        let train: Vec<_> = d.samples.iter().filter(|s| s.split == Split::Train).collect();
        for c in 0..d.meta.n {
            let xs: Vec<f64> = train.iter().flat_map(|s| (0..w).map(move |r| s.features.get(r, c))).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            prop_assert!(mean.abs() < 1e-9, "column {c} mean {mean}");
            if d.meta.standardization.constant[c] {
                prop_assert!(xs.iter().all(|x| *x == 0.0));
            } else {
                prop_assert!((var - 1.0).abs() < 1e-9, "column {c} variance {var}");
            }
        }

        let dir = tempfile::tempdir().unwrap();
        for format in [Format::Ndjson, Format::Csv] {
            let path = dir.path().join("d");
            export_dataset(&d, &path, format).unwrap();
            prop_assert_eq!(&read_dataset(&path).unwrap(), &d);
        }
    }
}
