use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Versions {
    pub gsg: &'static str,
    pub gauss_semigroup: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            gsg: env!("CARGO_PKG_VERSION"),
            gauss_semigroup: gauss_semigroup::VERSION,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub passed: bool,
    pub results: serde_json::Value,
    pub files: Vec<String>,
    pub versions: Versions,
    pub wall_clock_seconds: f64,
}

/// Writes `contents` to `dir/name` through a temporary file in the same
/// directory and an atomic rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target)
        .with_context(|| format!("cannot write {}", target.display()))?;
    Ok(target)
}
