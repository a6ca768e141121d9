//! Per-query configuration files: program, outputs, dataset task and the
//! synthetic stream that exercises the query.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{load_background, IoError, SyntheticConfig};
use crate::model::{Program, ProgramError, Symbol, Term};
use crate::parser::{parse_program, ParseError};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}:{}", .error.render())]
    Parse { path: PathBuf, error: ParseError },
    #[error(transparent)]
    Background(#[from] IoError),
    #[error("merging background facts: {0}")]
    Merge(#[from] ProgramError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    Boolean,
    Multilabel,
    Multiclass,
    Count,
}

/// A universe entry: a number or a symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entity {
    Num(f64),
    Sym(String),
}

impl Entity {
    pub fn to_term(&self) -> Term {
        match self {
            Entity::Num(x) => Term::num(*x),
            Entity::Sym(s) => Term::sym(s),
        }
    }
}

fn default_entity_args() -> Vec<usize> {
    vec![0]
}

fn default_train() -> f64 {
    0.8
}

fn default_val() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskName,
    /// Samples span this many ticks.
    pub window: usize,
    #[serde(default)]
    pub universe: Vec<Entity>,
    /// Argument positions of output atoms that name entities.
    #[serde(default = "default_entity_args")]
    pub entity_args: Vec<usize>,
    /// Multiclass only: class predicates by increasing priority; an implicit
    /// trailing `none` class covers entities with no class atom.
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default = "default_train")]
    pub train_frac: f64,
    #[serde(default = "default_val")]
    pub val_frac: f64,
}

/// How facts of one predicate become feature columns.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub predicate: String,
    pub value_arg: usize,
    pub sector_arg: usize,
    /// Arguments that, with sector and predicate, identify a column.
    #[serde(default)]
    pub key_args: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    pub name: String,
    /// Program file, relative to the config file.
    pub program: PathBuf,
    #[serde(default)]
    pub background: Vec<PathBuf>,
    pub outputs: Vec<String>,
    pub task: TaskConfig,
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

/// A configuration together with its parsed program.
#[derive(Clone, Debug)]
pub struct Query {
    pub config: QueryConfig,
    pub program: Program,
    pub dir: PathBuf,
}

impl Query {
    pub fn outputs(&self) -> Vec<Symbol> {
        self.config
            .outputs
            .iter()
            .map(|s| Symbol::from(s.as_str()))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, QueryError> {
        let text = std::fs::read_to_string(path).map_err(|source| QueryError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config: QueryConfig = toml::from_str(&text).map_err(|e| QueryError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let program_path = dir.join(&config.program);
        let mut program = load_program(&program_path)?;
        for bg in &config.background {
            program.merge(&load_background(&dir.join(bg))?)?;
        }
        let query = Query {
            config,
            program,
            dir,
        };
        query.validate(path)?;
        Ok(query)
    }

    fn validate(&self, path: &Path) -> Result<(), QueryError> {
        let fail = |message: String| {
            Err(QueryError::Config {
                path: path.to_path_buf(),
                message,
            })
        };
        let derived = self.program.derived_predicates();
        for o in &self.config.outputs {
            if !derived.contains(o.as_str()) {
                return fail(format!(
                    "output predicate `{o}` is not derived by the program"
                ));
            }
        }
        let t = &self.config.task;
        if t.window == 0 {
            return fail("task.window must be at least 1".into());
        }
        if matches!(t.kind, TaskName::Multilabel | TaskName::Multiclass) && t.universe.is_empty() {
            return fail("multilabel and multiclass tasks need a universe".into());
        }
        if t.kind == TaskName::Multiclass && t.classes.is_empty() {
            return fail("multiclass tasks need classes".into());
        }
        Ok(())
    }
}

/// Reads and parses a program file; the error carries the rendered position.
pub fn load_program(path: &Path) -> Result<Program, QueryError> {
    let text = std::fs::read_to_string(path).map_err(|source| QueryError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_program(&text).map_err(|error| QueryError::Parse {
        path: path.to_path_buf(),
        error,
    })
}
