//! File plumbing shared by the commands.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use cgm_forecast::pipeline::{ingest_csv, ingest_datasets, ingest_pool_csv, PretrainPool, SubDataset};
use cgm_forecast::{Error, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Creates `path` (and its parent) and hands a buffered writer to `body`.
pub fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    body(&mut w)?;
    w.flush().map_err(io)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_with(path, |w| {
        w.write_all(text.as_bytes()).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a T,
}

/// Writes the resolved flags of this run as `run_config.json` under `out`.
pub fn write_run_config<T: Serialize>(out: &Path, command: &str, config: &T) -> Result<()> {
    let doc = Sidecar {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Internal(format!("run config: {e}")))?;
    text.push('\n');
    write_text(&out.join("run_config.json"), &text)
}

/// `*.csv` files directly under `dir`, sorted by name.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!("no CSV files in {}", dir.display())));
    }
    Ok(files)
}

fn inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        csv_files(path)
    } else if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        })
    }
}

/// Fine-tune datasets from one CSV or a directory of them.
pub fn load_datasets(path: &Path) -> Result<Vec<SubDataset>> {
    let mut out = Vec::new();
    for file in inputs(path)? {
        out.extend(ingest_datasets(&file)?);
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no usable data in {}", path.display())));
    }
    Ok(out)
}

fn is_pool_file(path: &Path) -> Result<bool> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut header = String::new();
    BufReader::new(file).read_line(&mut header).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(header.split(',').any(|c| c.trim() == "segment_id"))
}

/// Pre-train pool from pool CSVs or plain series CSVs (every gap-free run kept).
pub fn load_pool(path: &Path) -> Result<PretrainPool> {
    let mut pool = PretrainPool::default();
    for file in inputs(path)? {
        if is_pool_file(&file)? {
            pool.segments.extend(ingest_pool_csv(&file)?.segments);
        } else {
            let series = ingest_csv(&file)?;
            pool.segments.extend(PretrainPool::from_series(&[series]).segments);
        }
    }
    Ok(pool)
}
