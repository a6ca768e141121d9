//! NDJSON stream files: one `{"t": .., "facts": [["pred", arg, ..], ..]}`
//! object per tick.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::{file_err, IoError};
use crate::model::{Atom, Interner, Number, Term, Time};
use crate::stream::Stream;

pub(crate) fn term_to_json(t: &Term) -> Value {
    match t {
        Term::Num(n) => {
            let v = n.value();
            if v.fract() == 0.0 && v.abs() < 9.0e15 {
                json!(v as i64)
            } else {
                json!(v)
            }
        }
        Term::Sym(s) => json!(&**s),
        Term::Var(v) => json!(format!("?{v}")),
    }
}

pub(crate) fn atom_to_json(a: &Atom) -> Value {
    let mut items = vec![json!(&*a.predicate)];
    items.extend(a.args.iter().map(term_to_json));
    Value::Array(items)
}

pub(crate) fn atom_from_json(v: &Value, symbols: &mut Interner) -> Result<Atom, String> {
    let items = v.as_array().ok_or("fact must be an array")?;
    let (pred, args) = items.split_first().ok_or("fact must name a predicate")?;
    let pred = pred.as_str().ok_or("predicate must be a string")?;
    let args = args
        .iter()
        .map(|a| match a {
            Value::Number(n) => n
                .as_f64()
                .and_then(Number::new)
                .map(Term::Num)
                .ok_or_else(|| format!("bad number {n}")),
            Value::String(s) => Ok(Term::Sym(symbols.intern(s))),
            other => Err(format!("unsupported argument {other}")),
        })
        .collect::<Result<_, _>>()?;
    Ok(Atom::new(symbols.intern(pred), args))
}

/// Writes every tick of the timeline, including empty ones, with facts in
/// canonical order.
pub fn write_stream<W: Write>(stream: &Stream, out: W) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    if let Some(tl) = stream.timeline() {
        for t in tl.iter() {
            let facts: Vec<Value> = stream
                .facts_at(t)
                .map(|f| f.sorted().into_iter().map(atom_to_json).collect())
                .unwrap_or_default();
            writeln!(out, "{}", json!({"t": t, "facts": facts}))?;
        }
    }
    out.flush()
}

/// Reads a stream; its timeline spans the smallest to the largest `t` seen.
pub fn read_stream<R: Read>(input: R, context: &str) -> Result<Stream, IoError> {
    let bad = |line: usize, message: String| IoError::BadStream {
        context: context.to_string(),
        line,
        message,
    };
    let mut ticks: Vec<(Time, Vec<Atom>)> = Vec::new();
    let mut symbols = Interner::default();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        let t = v
            .get("t")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad(i + 1, "missing or invalid \"t\"".into()))?;
        let facts = match v.get("facts") {
            None => Vec::new(),
            Some(Value::Array(fs)) => fs
                .iter()
                .map(|f| atom_from_json(f, &mut symbols))
                .collect::<Result<_, _>>()
                .map_err(|m| bad(i + 1, m))?,
            Some(_) => return Err(bad(i + 1, "\"facts\" must be an array".into())),
        };
        ticks.push((t, facts));
    }
    let (Some(lo), Some(hi)) = (
        ticks.iter().map(|x| x.0).min(),
        ticks.iter().map(|x| x.0).max(),
    ) else {
        return Ok(Stream::empty());
    };
    let mut stream = Stream::with_timeline(lo, hi).expect("lo <= hi");
    for (t, facts) in ticks {
        for a in facts {
            stream.insert(t, a).expect("ground atom within timeline");
        }
    }
    Ok(stream)
}

pub fn read_stream_file(path: &Path) -> Result<Stream, IoError> {
    let f = std::fs::File::open(path).map_err(file_err(path))?;
    read_stream(f, &path.display().to_string())
}

pub fn write_stream_file(stream: &Stream, path: &Path) -> Result<(), IoError> {
    let f = std::fs::File::create(path).map_err(file_err(path))?;
    write_stream(stream, f).map_err(file_err(path))
}
