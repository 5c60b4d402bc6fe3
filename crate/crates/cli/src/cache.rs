//! On-disk cache of null distributions, keyed by everything that determines
//! their values.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tstbench::nulls::{metadata_path, NullDistribution};
use tstbench::statistics::{MetricConfig, MetricKind};

pub const CACHE_ENV: &str = "TSTBENCH_CACHE";

/// The inputs a null distribution is a pure function of.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullKey {
    /// Serialized model, or `dataset:<content hash>`.
    pub source: String,
    pub metric: MetricKind,
    pub metric_config: MetricConfig,
    pub n: usize,
    pub iterations: usize,
    pub master_seed: u64,
    pub stream_label: String,
    pub scale_features: bool,
    pub with_replacement: bool,
}

impl NullKey {
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("key serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }

    pub fn file_name(&self) -> String {
        format!("null-{}-n{}-{}.csv", self.metric, self.n, self.digest())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheStatus {
    Hit,
    Built,
    /// A cache entry existed but could not be used.
    Rebuilt,
}

/// `TSTBENCH_CACHE` when set, else `<output>/cache`.
pub fn cache_dir(output: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => output.join("cache"),
    }
}

fn key_path(csv: &Path) -> PathBuf {
    let mut p = csv.as_os_str().to_owned();
    p.push(".key.json");
    PathBuf::from(p)
}

fn read_entry(csv: &Path, key: &NullKey) -> Result<NullDistribution, String> {
    let stored: NullKey = serde_json::from_str(&fs::read_to_string(key_path(csv)).map_err(|e| e.to_string())?)
        .map_err(|e| format!("bad key file: {e}"))?;
    if &stored != key {
        return Err("key mismatch".into());
    }
    let null = NullDistribution::load(csv).map_err(|e| e.to_string())?;
    if null.metric != key.metric || null.n != key.n || null.iterations != key.iterations {
        return Err("metadata does not match key".into());
    }
    Ok(null)
}

/// Loads the cached null for `key`, or builds and stores it.
///
/// Unreadable entries are rebuilt with a warning. The key file is written
/// last, so an interrupted write never produces a hit.
pub fn load_or_build<F>(
    dir: &Path,
    key: &NullKey,
    build: F,
) -> tstbench::Result<(NullDistribution, CacheStatus, PathBuf)>
where
    F: FnOnce() -> tstbench::Result<NullDistribution>,
{
    fs::create_dir_all(dir)?;
    let csv = dir.join(key.file_name());
    let mut status = CacheStatus::Built;
    if csv.exists() || key_path(&csv).exists() {
        match read_entry(&csv, key) {
            Ok(null) => return Ok((null, CacheStatus::Hit, csv)),
            Err(e) => {
                warn!("ignoring cache entry {}: {e}; recomputing", csv.display());
                status = CacheStatus::Rebuilt;
                let _ = fs::remove_file(key_path(&csv));
            }
        }
    }
    let null = build()?;
    null.save(&csv)?;
    let key_json = serde_json::to_string_pretty(key).map_err(|e| tstbench::Error::Io(e.into()))?;
    fs::write(key_path(&csv), key_json)?;
    Ok((null, status, csv))
}

/// Files making up one cache entry.
pub fn entry_files(csv: &Path) -> [PathBuf; 3] {
    [csv.to_path_buf(), metadata_path(csv), key_path(csv)]
}
