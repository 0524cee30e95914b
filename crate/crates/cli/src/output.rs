use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{lattice_hash, ExperimentConfig};
use crate::CliResult;

/// Everything needed to rerun an experiment bit-identically.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub name: String,
    pub command: String,
    pub config_hash: String,
    pub lattice_hash: Option<String>,
    pub master_seed: u64,
    pub version: String,
    pub config: ExperimentConfig,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        cfg: &ExperimentConfig,
        started: SystemTime,
        elapsed: Duration,
        files: Vec<String>,
    ) -> Self {
        RunManifest {
            name: cfg.name.clone(),
            command: command.into(),
            config_hash: cfg.hash(),
            lattice_hash: lattice_hash(&cfg.model),
            master_seed: cfg.channel.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            started_unix: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            elapsed_seconds: elapsed.as_secs_f64(),
            files,
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join("manifest.json"), text + "\n")?;
        fs::write(dir.join("config.toml"), self.config.canonical())?;
        Ok(())
    }
}

pub fn run_dir(out: &Path, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = out.join("runs").join(&cfg.name).join(cfg.hash());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Comma-separated table with a header row.
pub struct Table {
    writer: csv::Writer<fs::File>,
    pub name: String,
}

impl Table {
    pub fn create<S: AsRef<str>>(dir: &Path, name: &str, header: &[S]) -> CliResult<Self> {
        let mut writer = csv::Writer::from_path(dir.join(name))?;
        writer.write_record(header.iter().map(|h| h.as_ref()))?;
        Ok(Table { writer, name: name.into() })
    }

    pub fn row(&mut self, fields: impl IntoIterator<Item = String>) -> CliResult<()> {
        self.writer.write_record(fields.into_iter().collect::<Vec<_>>())?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<String> {
        self.writer.flush()?;
        Ok(self.name)
    }
}

pub fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x}")
    }
}
