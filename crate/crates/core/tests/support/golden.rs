//! Loader and runner for the hand-derived cases in `golden/cases.toml`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use larstream::incremental::run_stream_incremental;
use larstream::model::{Atom, Symbol, Time};
use larstream::naive::run_stream_naive;
use larstream::parser::{parse_atom, parse_program};
use larstream::stream::Stream;

pub struct Case {
    pub name: String,
    pub program: String,
    pub outputs: Vec<Symbol>,
    pub stream: Stream,
    pub expect: BTreeMap<Time, BTreeSet<Atom>>,
}

fn strings(v: &toml::Value, what: &str) -> Vec<String> {
    v.as_array()
        .unwrap_or_else(|| panic!("{what} must be an array"))
        .iter()
        .map(|s| {
            s.as_str()
                .unwrap_or_else(|| panic!("{what} holds strings"))
                .to_string()
        })
        .collect()
}

pub fn load(path: &Path) -> Vec<Case> {
    let text = std::fs::read_to_string(path).expect("golden cases readable");
    let doc: toml::Table = text.parse().expect("golden cases are TOML");
    let cases = doc["case"].as_array().expect("[[case]] entries");
    cases
        .iter()
        .map(|c| {
            let name = c["name"].as_str().unwrap().to_string();
            let ticks = c["ticks"].as_integer().unwrap() as Time;
            let mut stream = Stream::with_timeline(0, ticks - 1).unwrap();
            for entry in strings(&c["stream"], "stream") {
                let (t, atom) = entry.split_once(' ').expect("`tick atom`");
                stream
                    .insert(t.parse().unwrap(), parse_atom(atom).unwrap())
                    .unwrap();
            }
            let expect = c["expect"]
                .as_table()
                .unwrap()
                .iter()
                .map(|(t, atoms)| {
                    let atoms = strings(atoms, "expect")
                        .iter()
                        .map(|a| parse_atom(a).unwrap())
                        .collect();
                    (t.parse().unwrap(), atoms)
                })
                .collect();
            Case {
                outputs: strings(&c["outputs"], "outputs")
                    .iter()
                    .map(|s| Symbol::from(s.as_str()))
                    .collect(),
                program: c["program"].as_str().unwrap().to_string(),
                name,
                stream,
                expect,
            }
        })
        .collect()
}

/// Runs a case on both engines; returns a description of the first
/// disagreement with the expected answers.
pub fn check(case: &Case) -> Result<(), String> {
    let program =
        parse_program(&case.program).map_err(|e| format!("{}: {}", case.name, e.render()))?;
    let runs = [
        (
            "naive",
            run_stream_naive(&program, &case.stream, &case.outputs),
        ),
        (
            "incremental",
            run_stream_incremental(&program, &case.stream, &case.outputs),
        ),
    ];
    for (engine, result) in runs {
        let answers = result.map_err(|e| format!("{}: {engine}: {e}", case.name))?;
        for (t, got) in answers {
            let want = case.expect.get(&t).cloned().unwrap_or_default();
            if got != want {
                let show = |s: &BTreeSet<Atom>| {
                    s.iter()
                        .map(|a| a.to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                return Err(format!(
                    "{}: {engine} at t={t}: expected {{{}}}, got {{{}}}",
                    case.name,
                    show(&want),
                    show(&got)
                ));
            }
        }
    }
    Ok(())
}
