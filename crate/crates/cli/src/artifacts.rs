use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use loopforge::formats::fnv1a64;
use serde::Serialize;
use serde_json::Value;

use crate::config::PipelineConfig;

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    /// 64-bit FNV-1a, lowercase hex.
    pub fnv1a64: String,
}

impl FileDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        FileDigest {
            path: path.to_path_buf(),
            fnv1a64: format!("{:016x}", fnv1a64(bytes)),
        }
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Record of one subcommand run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub summary: Value,
}

impl RunManifest {
    pub fn start(subcommand: &str, config: &PipelineConfig) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            seed: config.seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0.0,
            summary: Value::Null,
        }
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read(path)?;
        self.inputs.push(FileDigest::of(path, &bytes));
        Ok(bytes)
    }

    /// Writes an output atomically and records its digest.
    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(FileDigest::of(path, bytes));
        Ok(())
    }

    /// Finalizes and writes `<work_dir>/<subcommand>.manifest.json`.
    pub fn finish(mut self, summary: Value) -> Result<PathBuf> {
        self.summary = summary;
        self.finished_unix = unix_now();
        let path = self.config.work(&format!("{}.manifest.json", self.subcommand));
        write_atomic(&path, serde_json::to_string_pretty(&self)?.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn digest_is_hex_fnv() {
        assert_eq!(FileDigest::of(Path::new("x"), b"a").fnv1a64, "af63dc4c8601ec8c");
    }
}
