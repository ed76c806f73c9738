use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use pimcnn::config::OutputFormat;
use serde::Serialize;

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Writes `rows` as `<stem>.csv` or `<stem>.json` and returns the path.
pub fn write_rows<T: Serialize>(dir: &Path, stem: &str, format: OutputFormat, rows: &[T]) -> anyhow::Result<PathBuf> {
    create_dir(dir)?;
    match format {
        OutputFormat::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(path)
        }
        OutputFormat::Json => write_json(dir, stem, &rows),
    }
}

pub fn write_json<T: Serialize + ?Sized>(dir: &Path, stem: &str, value: &T) -> anyhow::Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}
