//! Getting streams in and out: NDJSON stream files, CSV sensor logs,
//! background facts and a seeded synthetic generator.

mod ingest;
mod ndjson;
mod sectors;
mod synthetic;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::Program;
use crate::parser::{parse_program, ParseError};

pub use ingest::{
    load_csv, load_sensor_table, LoadOptions, LoadReport, SensorKind, SensorMeta, SensorTable,
};
pub use ndjson::{read_stream, read_stream_file, write_stream, write_stream_file};
pub use sectors::{assign_sectors, sector_sizes};
pub use synthetic::{
    generate_synthetic, AnomalyConfig, Profile, SyntheticConfig, ValueMode, CLUSTERS,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {}", .error.render())]
    Parse { path: PathBuf, error: ParseError },
    #[error("{path}: rule `{rule}` is not a fact")]
    NotAFact { path: PathBuf, rule: String },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}, row {row}: {message}")]
    BadRow {
        path: PathBuf,
        row: u64,
        message: String,
    },
    #[error("{context}: line {line}: {message}")]
    BadStream {
        context: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a file of ground facts (`city(3) :-,` ...) into a program fragment.
pub fn load_background(path: &Path) -> Result<Program, IoError> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    let program = parse_program(&text).map_err(|error| IoError::Parse {
        path: path.to_path_buf(),
        error,
    })?;
    if let Some(rule) = program.rules.iter().find(|r| !r.is_fact()) {
        return Err(IoError::NotAFact {
            path: path.to_path_buf(),
            rule: crate::parser::format_rule(rule),
        });
    }
    Ok(program)
}
