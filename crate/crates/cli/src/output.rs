//! Run directories, manifests and report serialization.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// `{outdir}/{command}/{timestamp}/`, suffixed on collision.
pub fn run_dir(outdir: &str, command: &str) -> Result<PathBuf> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let base = Path::new(outdir).join(command);
    std::fs::create_dir_all(&base)?;
    let mut dir = base.join(stamp.to_string());
    let mut k = 0;
    while dir.exists() {
        k += 1;
        dir = base.join(format!("{stamp}-{k}"));
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    /// SHA-256 of the configuration file bytes.
    pub config_sha256: String,
    pub config_path: String,
    /// Dotted-path overrides applied on top of the file.
    pub overrides: Vec<(String, String)>,
    pub root_seed: u64,
    pub threads: usize,
    pub created_unix: u64,
    pub version: &'a str,
}

pub fn content_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    write_json(&dir.join("manifest.json"), manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Long-format CSV: one `(N, seed, metric, value)` row per measurement.
pub fn write_long_csv(path: &Path, rows: &[(usize, String, String, f64)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "N,seed,metric,value")?;
    for (n, seed, metric, value) in rows {
        writeln!(out, "{n},{seed},{metric},{}", mfglab::io::fmt(*value))?;
    }
    out.flush()?;
    Ok(())
}
