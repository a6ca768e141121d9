//! Labeled datasets from a stream and the reasoner's per-tick answers:
//! windowed feature matrices, task labels, standardization and splits.

mod export;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Atom, Symbol, Term, Time};
use crate::query::{FeatureSpec, TaskConfig, TaskName};
use crate::stream::Stream;

pub use export::{export_dataset, meta_path, read_dataset, Format};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("tick {t} is outside the encodable range [{lo}, {hi}]")]
    OutOfRange { t: Time, lo: Time, hi: Time },
    #[error("entity `{entity}` in `{atom}` is not in the universe")]
    UnknownEntity { entity: Term, atom: Atom },
    #[error("`{0}` is not a class predicate")]
    UnknownClass(Atom),
    #[error("cannot split {n} samples into nonempty train and test parts")]
    TooFewSamples { n: usize },
    #[error("fractions must lie in (0, 1): train {train}, val {val}")]
    BadFractions { train: f64, val: f64 },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One feature column: a reading source identified by sector, predicate and
/// key arguments. Derived ordering is the column order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureSlot {
    pub sector: Term,
    pub predicate: Symbol,
    pub key: Vec<Term>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "SchemaRepr")]
pub struct FeatureSchema {
    pub window: usize,
    pub columns: Vec<FeatureSlot>,
    pub specs: Vec<FeatureSpec>,
    #[serde(skip)]
    index: HashMap<FeatureSlot, usize>,
}

#[derive(Deserialize)]
struct SchemaRepr {
    window: usize,
    columns: Vec<FeatureSlot>,
    specs: Vec<FeatureSpec>,
}

impl From<SchemaRepr> for FeatureSchema {
    fn from(r: SchemaRepr) -> Self {
        FeatureSchema::new(r.window, r.specs, r.columns)
    }
}

impl PartialEq for FeatureSchema {
    fn eq(&self, other: &Self) -> bool {
        self.window == other.window && self.columns == other.columns && self.specs == other.specs
    }
}

fn reading(spec: &FeatureSpec, atom: &Atom) -> Option<(FeatureSlot, f64)> {
    if *atom.predicate != *spec.predicate {
        return None;
    }
    let arg = |i: usize| atom.args.get(i);
    let value = arg(spec.value_arg)?.as_number()?.value();
    let key = spec
        .key_args
        .iter()
        .map(|&i| arg(i).cloned())
        .collect::<Option<Vec<Term>>>()?;
    Some((
        FeatureSlot {
            sector: arg(spec.sector_arg)?.clone(),
            predicate: atom.predicate.clone(),
            key,
        },
        value,
    ))
}

impl FeatureSchema {
    pub fn new(window: usize, specs: Vec<FeatureSpec>, mut columns: Vec<FeatureSlot>) -> Self {
        columns.sort();
        columns.dedup();
        let mut schema = FeatureSchema {
            window,
            columns,
            specs,
            index: HashMap::new(),
        };
        schema.reindex();
        schema
    }

    /// Columns for every reading source that occurs in `stream`.
    pub fn discover(stream: &Stream, specs: &[FeatureSpec], window: usize) -> Self {
        let mut slots = BTreeSet::new();
        for (_, facts) in stream.iter() {
            for atom in facts.iter() {
                for spec in specs {
                    if let Some((slot, _)) = reading(spec, atom) {
                        slots.insert(slot);
                    }
                }
            }
        }
        FeatureSchema::new(window, specs.to_vec(), slots.into_iter().collect())
    }

    fn reindex(&mut self) {
        self.index = self
            .columns
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// The feature row of one tick: per column the mean of its readings, or
    /// 0 when there are none.
    pub fn row(&self, stream: &Stream, t: Time) -> Vec<f64> {
        let n = self.width();
        let mut sum = vec![0.0; n];
        let mut count = vec![0u32; n];
        if let Some(facts) = stream.facts_at(t) {
            for atom in facts.sorted() {
                for spec in &self.specs {
                    if let Some((slot, v)) = reading(spec, atom) {
                        if let Some(&i) = self.index.get(&slot) {
                            sum[i] += v;
                            count[i] += 1;
                        }
                    }
                }
            }
        }
        sum.iter()
            .zip(&count)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }
}

/// A dense row-major matrix; rows are ticks (oldest first), columns features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn from_rows(rows: &[&Vec<f64>], cols: usize) -> Self {
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }
}

/// The `w x n` window ending at `t`.
pub fn encode_window(
    stream: &Stream,
    schema: &FeatureSchema,
    t: Time,
) -> Result<Matrix, DatasetError> {
    let w = schema.window as u64;
    let (lo, hi) = match stream.timeline() {
        Some(tl) if tl.len() >= w => (tl.start + w - 1, tl.end),
        Some(tl) => (tl.end + 1, tl.end),
        None => (1, 0),
    };
    if t < lo || t > hi {
        return Err(DatasetError::OutOfRange { t, lo, hi });
    }
    let rows: Vec<Vec<f64>> = (t + 1 - w..=t).map(|u| schema.row(stream, u)).collect();
    let refs: Vec<&Vec<f64>> = rows.iter().collect();
    Ok(Matrix::from_rows(&refs, schema.width()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "lowercase")]
pub enum TaskKind {
    Boolean,
    Multilabel(usize),
    Multiclass(usize),
    Count,
}

/// What gets labeled and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub task: TaskKind,
    pub universe: Vec<Term>,
    pub entity_args: Vec<usize>,
    pub classes: Vec<Symbol>,
}

impl LabelSpec {
    pub fn from_config(cfg: &TaskConfig) -> Self {
        let universe: Vec<Term> = cfg.universe.iter().map(|e| e.to_term()).collect();
        let task = match cfg.kind {
            TaskName::Boolean => TaskKind::Boolean,
            TaskName::Count => TaskKind::Count,
            TaskName::Multilabel => TaskKind::Multilabel(universe.len()),
            TaskName::Multiclass => TaskKind::Multiclass(cfg.classes.len() + 1),
        };
        LabelSpec {
            task,
            universe,
            entity_args: cfg.entity_args.clone(),
            classes: cfg
                .classes
                .iter()
                .map(|c| Symbol::from(c.as_str()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Label {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Label::Scalar(x) => vec![*x],
            Label::Vector(v) => v.clone(),
        }
    }

    pub fn key(&self) -> String {
        serde_json::to_string(self).expect("labels serialize")
    }
}

fn entities<'a>(atom: &'a Atom, args: &[usize]) -> Vec<&'a Term> {
    if args.is_empty() {
        atom.args.iter().collect()
    } else {
        args.iter().filter_map(|&i| atom.args.get(i)).collect()
    }
}

/// The label of one tick's output atoms.
pub fn make_label(outputs: &BTreeSet<Atom>, spec: &LabelSpec) -> Result<Label, DatasetError> {
    let position = |e: &Term, atom: &Atom| {
        spec.universe
            .iter()
            .position(|u| u == e)
            .ok_or_else(|| DatasetError::UnknownEntity {
                entity: e.clone(),
                atom: atom.clone(),
            })
    };
    Ok(match spec.task {
        TaskKind::Boolean => Label::Scalar(if outputs.is_empty() { 0.0 } else { 1.0 }),
        TaskKind::Count => {
            let distinct: BTreeSet<Vec<&Term>> = outputs
                .iter()
                .map(|a| entities(a, &spec.entity_args))
                .collect();
            Label::Scalar(distinct.len() as f64)
        }
        TaskKind::Multilabel(k) => {
            let mut bits = vec![0.0; k];
            for atom in outputs {
                for e in entities(atom, &spec.entity_args) {
                    bits[position(e, atom)?] = 1.0;
                }
            }
            Label::Vector(bits)
        }
        TaskKind::Multiclass(k) => {
            let none = (k - 1) as f64;
            let mut classes = vec![none; spec.universe.len()];
            for atom in outputs {
                let class = spec
                    .classes
                    .iter()
                    .position(|c| *c == atom.predicate)
                    .ok_or_else(|| DatasetError::UnknownClass(atom.clone()))?;
                for e in entities(atom, &spec.entity_args) {
                    let slot = &mut classes[position(e, atom)?];
                    // higher index wins; `none` only when nothing matched
                    if *slot == none || class as f64 > *slot {
                        *slot = class as f64;
                    }
                }
            }
            Label::Vector(classes)
        }
    })
}

/// Labels for each `(tick, outputs)` pair.
pub fn make_labels(
    results: &[(Time, BTreeSet<Atom>)],
    spec: &LabelSpec,
) -> Result<Vec<(Time, Label)>, DatasetError> {
    results
        .iter()
        .map(|(t, out)| make_label(out, spec).map(|l| (*t, l)))
        .collect()
}

/// Per-column z-score parameters (population deviation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

/// Fits over every row of every given matrix. Columns whose deviation is
/// zero are marked constant.
pub fn fit_standardize<'a, I>(samples: I, cols: usize) -> StandardizationParams
where
    I: IntoIterator<Item = &'a Matrix> + Clone,
{
    let mut count = 0usize;
    let mut sum = vec![0.0; cols];
    for m in samples.clone() {
        for r in 0..m.rows {
            for (c, s) in sum.iter_mut().enumerate() {
                *s += m.get(r, c);
            }
        }
        count += m.rows;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count.max(1) as f64).collect();
    let mut sq = vec![0.0; cols];
    for m in samples {
        for r in 0..m.rows {
            for (c, q) in sq.iter_mut().enumerate() {
                let d = m.get(r, c) - mean[c];
                *q += d * d;
            }
        }
    }
    let std: Vec<f64> = sq
        .iter()
        .map(|q| (q / count.max(1) as f64).sqrt())
        .collect();
    let constant = std
        .iter()
        .zip(&mean)
        .map(|(s, m)| *s <= 1e-12 * m.abs().max(1.0))
        .collect();
    StandardizationParams {
        mean,
        std,
        constant,
    }
}

impl StandardizationParams {
    pub fn apply(&self, m: &mut Matrix) {
        for r in 0..m.rows {
            for c in 0..m.cols {
                let x = &mut m.data[r * m.cols + c];
                *x = if self.constant[c] {
                    0.0
                } else {
                    (*x - self.mean[c]) / self.std[c]
                };
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Chronological split: the first `floor(n * train_frac)` samples are for
/// training, of which the last `floor(that * val_frac)` are for validation;
/// the rest is the test split.
pub fn split_sizes(n: usize, train_frac: f64, val_frac: f64) -> Result<SplitSizes, DatasetError> {
    let open = |x: f64| x > 0.0 && x < 1.0;
    if !open(train_frac) || !(open(val_frac) || val_frac == 0.0) {
        return Err(DatasetError::BadFractions {
            train: train_frac,
            val: val_frac,
        });
    }
    let total = (n as f64 * train_frac + 1e-9).floor() as usize;
    let val = (total as f64 * val_frac + 1e-9).floor() as usize;
    let sizes = SplitSizes {
        train: total - val,
        val,
        test: n - total,
    };
    if sizes.train == 0 || sizes.test == 0 {
        return Err(DatasetError::TooFewSamples { n });
    }
    Ok(sizes)
}

/// Train, validation and test parts, in order.
pub type Splits<T> = (Vec<T>, Vec<T>, Vec<T>);

pub fn split_dataset<T>(
    mut samples: Vec<T>,
    train_frac: f64,
    val_frac: f64,
) -> Result<Splits<T>, DatasetError> {
    let s = split_sizes(samples.len(), train_frac, val_frac)?;
    let test = samples.split_off(s.train + s.val);
    let val = samples.split_off(s.train);
    Ok((samples, val, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: Time,
    pub split: Split,
    pub features: Matrix,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub query: String,
    pub task: TaskKind,
    pub window: usize,
    pub n: usize,
    pub schema: FeatureSchema,
    pub labels: LabelSpec,
    pub standardization: StandardizationParams,
    pub splits: SplitSizes,
    pub label_histogram: BTreeMap<String, usize>,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

/// Builds the standardized dataset. `answers` holds the output atoms of
/// every tick of the stream's timeline.
pub fn build_dataset(
    query: &str,
    stream: &Stream,
    answers: &[(Time, BTreeSet<Atom>)],
    schema: FeatureSchema,
    labels: LabelSpec,
    train_frac: f64,
    val_frac: f64,
) -> Result<Dataset, DatasetError> {
    let w = schema.window;
    let Some(tl) = stream.timeline() else {
        return Err(DatasetError::TooFewSamples { n: 0 });
    };
    let ticks: Vec<Time> = tl.iter().collect();
    let rows: Vec<Vec<f64>> = crate::par::map(&ticks, |t| schema.row(stream, *t));

    let by_tick: HashMap<Time, &BTreeSet<Atom>> = answers.iter().map(|(t, a)| (*t, a)).collect();
    let empty = BTreeSet::new();
    let mut samples = Vec::new();
    for end in (w - 1).min(ticks.len())..ticks.len() {
        let t = ticks[end];
        let window: Vec<&Vec<f64>> = rows[end + 1 - w..=end].iter().collect();
        let label = make_label(by_tick.get(&t).copied().unwrap_or(&empty), &labels)?;
        samples.push((t, Matrix::from_rows(&window, schema.width()), label));
    }
    let splits = split_sizes(samples.len(), train_frac, val_frac)?;
    let params = fit_standardize(samples[..splits.train].iter().map(|s| &s.1), schema.width());
    let mut histogram = BTreeMap::new();
    let samples: Vec<Sample> = samples
        .into_iter()
        .enumerate()
        .map(|(i, (t, mut features, label))| {
            params.apply(&mut features);
            *histogram.entry(label.key()).or_insert(0) += 1;
            let split = if i < splits.train {
                Split::Train
            } else if i < splits.train + splits.val {
                Split::Val
            } else {
                Split::Test
            };
            Sample {
                t,
                split,
                features,
                label,
            }
        })
        .collect();
    Ok(Dataset {
        meta: DatasetMeta {
            query: query.to_string(),
            task: labels.task,
            window: w,
            n: schema.width(),
            schema,
            labels,
            standardization: params,
            splits,
            label_histogram: histogram,
            samples: samples.len(),
        },
        samples,
    })
}
