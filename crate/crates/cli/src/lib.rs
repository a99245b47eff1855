//! Configuration-driven experiment runner writing CSV tables.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use stwave_core::experiments::{self, ExperimentConfig, Table};
use thiserror::Error;

pub use config::{parse, ConfigError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("experiment [{name}]: {source}")]
    Experiment {
        name: String,
        source: stwave_core::Error,
    },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

/// Write `table` as CSV with a header row.
pub fn write_csv(table: &Table, path: &Path) -> Result<(), CliError> {
    let csv_err = |source| CliError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&table.columns).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Run every experiment in order and write one CSV per experiment into
/// `out_dir`. Returns the written paths.
pub fn run_all(configs: &[ExperimentConfig], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    for cfg in configs {
        info!("running [{}] ({})", cfg.name, cfg.kind.name());
        let table = experiments::run(cfg).map_err(|source| CliError::Experiment {
            name: cfg.name.clone(),
            source,
        })?;
        let path = out_dir.join(&cfg.output);
        write_csv(&table, &path)?;
        info!("wrote {} rows to {}", table.rows.len(), path.display());
        written.push(path);
    }
    Ok(written)
}

/// Read and parse a configuration file.
pub fn load(path: &Path, default_seed: u64) -> Result<Vec<ExperimentConfig>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text, default_seed).map_err(|source| CliError::Config {
        path: path.display().to_string(),
        source,
    })
}
