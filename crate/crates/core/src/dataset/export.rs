//! Dataset files: one record per sample plus a `<file>.meta.json` sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Dataset, DatasetError, DatasetMeta, Label, Matrix, Sample, Split, TaskKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Ndjson,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ndjson" => Ok(Format::Ndjson),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected ndjson or csv)")),
        }
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    format: Format,
    #[serde(flatten)]
    meta: DatasetMeta,
}

fn label_width(task: TaskKind, universe: usize) -> usize {
    match task {
        TaskKind::Boolean | TaskKind::Count => 1,
        TaskKind::Multilabel(_) | TaskKind::Multiclass(_) => universe,
    }
}

fn bad(msg: impl Into<String>) -> DatasetError {
    DatasetError::Format(msg.into())
}

/// Writes `dataset` to `path` and its metadata next to it. Output depends
/// only on the dataset, so identical inputs give identical bytes.
pub fn export_dataset(dataset: &Dataset, path: &Path, format: Format) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Ndjson => {
            for s in &dataset.samples {
                let line = json!({
                    "t": s.t,
                    "split": s.split,
                    "features": s.features.data,
                    "label": s.label,
                });
                serde_json::to_writer(&mut out, &line).map_err(|e| bad(e.to_string()))?;
                out.write_all(b"\n")?;
            }
        }
        Format::Csv => {
            let meta = &dataset.meta;
            let mut header: Vec<String> = vec!["t".into(), "split".into()];
            for r in 0..meta.window {
                for c in 0..meta.n {
                    header.push(format!("x{r}_{c}"));
                }
            }
            let k = label_width(meta.task, meta.labels.universe.len());
            if k == 1 && matches!(meta.task, TaskKind::Boolean | TaskKind::Count) {
                header.push("label".into());
            } else {
                header.extend((0..k).map(|i| format!("label_{i}")));
            }
            writeln!(out, "{}", header.join(","))?;
            for s in &dataset.samples {
                let mut fields = vec![s.t.to_string(), s.split.as_str().to_string()];
                fields.extend(s.features.data.iter().map(|x| x.to_string()));
                fields.extend(s.label.values().iter().map(|x| x.to_string()));
                writeln!(out, "{}", fields.join(","))?;
            }
        }
    }
    out.flush()?;
    let meta = MetaFile {
        format,
        meta: dataset.meta.clone(),
    };
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| bad(e.to_string()))?;
    text.push('\n');
    std::fs::write(meta_path(path), text)?;
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, DatasetError> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(bad(format!("unknown split `{other}`"))),
    }
}

#[derive(Deserialize)]
struct Record {
    t: u64,
    split: Split,
    features: Vec<f64>,
    label: Label,
}

/// Reads a file written by [`export_dataset`] together with its sidecar.
pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let meta_text = std::fs::read_to_string(meta_path(path))?;
    let MetaFile { format, meta } =
        serde_json::from_str(&meta_text).map_err(|e| bad(format!("metadata: {e}")))?;
    let (rows, cols) = (meta.window, meta.n);
    let matrix = |data: Vec<f64>| -> Result<Matrix, DatasetError> {
        if data.len() != rows * cols {
            return Err(bad(format!(
                "expected {} features, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    };
    let mut samples = Vec::with_capacity(meta.samples);
    let reader = BufReader::new(File::open(path)?);
    match format {
        Format::Ndjson => {
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                samples.push(Sample {
                    t: r.t,
                    split: r.split,
                    features: matrix(r.features)?,
                    label: r.label,
                });
            }
        }
        Format::Csv => {
            let k = label_width(meta.task, meta.labels.universe.len());
            let mut csv = csv::Reader::from_reader(reader);
            for rec in csv.records() {
                let rec = rec.map_err(|e| bad(e.to_string()))?;
                if rec.len() != 2 + rows * cols + k {
                    return Err(bad(format!("row has {} fields", rec.len())));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
                let t = rec[0].parse::<u64>().map_err(|e| bad(e.to_string()))?;
                let values: Vec<f64> = rec.iter().skip(2).map(num).collect::<Result<_, _>>()?;
                let (features, label) = values.split_at(rows * cols);
                let label = match meta.task {
                    TaskKind::Boolean | TaskKind::Count => Label::Scalar(label[0]),
                    _ => Label::Vector(label.to_vec()),
                };
                samples.push(Sample {
                    t,
                    split: parse_split(&rec[1])?,
                    features: matrix(features.to_vec())?,
                    label,
                });
            }
        }
    }
    if samples.len() != meta.samples {
        return Err(bad(format!(
            "metadata promises {} samples, file has {}",
            meta.samples,
            samples.len()
        )));
    }
    Ok(Dataset { meta, samples })
}
