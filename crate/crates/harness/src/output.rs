//! Files written for each run: `<stem>.csv`, `<stem>.jsonl` and `<stem>.toml`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use orthonet_core::diagnostics::RunLog;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;

pub fn write_run(dir: &Path, stem: &str, cfg: &ExperimentConfig, log: &RunLog) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    log.write_csv(BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?))?;
    log.write_jsonl(BufWriter::new(File::create(dir.join(format!("{stem}.jsonl")))?))?;
    fs::write(dir.join(format!("{stem}.toml")), cfg.to_toml()?)?;
    Ok(dir.join(format!("{stem}.csv")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes serializable rows as CSV with a header taken from the field names.
pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for r in rows {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}
