//! A validated configuration bound to its data, cache and output locations.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use tstbench::dataio::{load_dataset, DataFormat, Dataset};
use tstbench::deformations::DeformKind;
use tstbench::models::ModelSpec;
use tstbench::nulls::{estimate_null_bootstrap_with, estimate_null_generator, NullDistribution};
use tstbench::rng::RngStream;
use tstbench::scan::{PreparedDataset, ScanProblem, ScanSource};
use tstbench::statistics::MetricKind;

use crate::cache::{cache_dir, load_or_build, CacheStatus, NullKey};
use crate::config::{ConfigError, ExperimentConfig, SourceConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("missing cache: {0}")]
    MissingCache(String),
    #[error(transparent)]
    Core(#[from] tstbench::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub enum Source {
    Model(ModelSpec),
    Dataset { data: Dataset, prepared: PreparedDataset },
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub output: PathBuf,
    pub cache: PathBuf,
    pub source: Source,
    pub model_id: String,
}

/// One entry of `nulls.json`, the index `report` reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullIndexEntry {
    pub metric: MetricKind,
    pub n: usize,
    pub file: PathBuf,
}

pub const NULL_INDEX: &str = "nulls.json";

pub fn null_stream_label(metric: MetricKind, n: usize) -> String {
    format!("null/{metric}/{n}")
}

/// Scan streams do not depend on the metric, so all metrics of a row see the
/// same deformation family and the same samples.
pub fn scan_stream_label(deform: DeformKind, n: usize) -> String {
    format!("scan/{}/{n}", deform.name())
}

impl Experiment {
    pub fn new(config: ExperimentConfig, output: PathBuf) -> Result<Self, CliError> {
        let cache = cache_dir(&output);
        let (source, model_id) = match &config.source {
            SourceConfig::Dataset { path, format } => {
                let fmt = format.unwrap_or_else(|| DataFormat::from_path(path));
                let data = load_dataset(path, fmt)
                    .map_err(|e| ConfigError::Invalid { pointer: "/source/dataset/path".into(), msg: e.to_string() })?;
                let prepared = PreparedDataset::new(&data.matrix)
                    .map_err(|e| ConfigError::Invalid { pointer: "/source/dataset/path".into(), msg: e.to_string() })?;
                let id = format!("dataset-{}", &data.content_hash[..8]);
                (Source::Dataset { data, prepared }, id)
            }
            _ => {
                let model = config.model()?.expect("analytic source");
                let id = format!("{}-d{}", model.family(), model.dim());
                (Source::Model(model), id)
            }
        };
        let exp = Self { config, output, cache, source, model_id };
        exp.check_sizes()?;
        Ok(exp)
    }

    /// Size checks that need the loaded data.
    fn check_sizes(&self) -> Result<(), ConfigError> {
        let Source::Dataset { data, .. } = &self.source else {
            return Ok(());
        };
        let half = data.rows() / 2;
        for (i, &n) in self.config.sample_sizes.iter().enumerate() {
            let at = |msg: String| ConfigError::Invalid { pointer: format!("/sample_sizes/{i}"), msg };
            if self.config.metrics.contains(&MetricKind::FGD) && n < data.cols() + 2 {
                return Err(at(format!("FGD needs n >= d + 2 = {}, got {n}", data.cols() + 2)));
            }
            if !self.config.with_replacement && n > half {
                return Err(at(format!("draws without replacement need n <= {half}, got {n}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            Source::Model(m) => m.dim(),
            Source::Dataset { data, .. } => data.cols(),
        }
    }

    pub fn null_key(&self, metric: MetricKind, n: usize) -> NullKey {
        let source = match &self.source {
            Source::Model(m) => serde_json::to_string(m).expect("model serializes"),
            Source::Dataset { data, .. } => format!("dataset:{}", data.content_hash),
        };
        let dataset = matches!(self.source, Source::Dataset { .. });
        NullKey {
            source,
            metric,
            metric_config: self.config.metric_config.clone(),
            n,
            iterations: self.config.null_iterations,
            master_seed: self.config.master_seed,
            stream_label: null_stream_label(metric, n),
            scale_features: dataset && self.config.scale_features,
            with_replacement: !dataset || self.config.with_replacement,
        }
    }

    /// The fixed null of a non-LLR metric, from the cache when possible.
    pub fn null(&self, metric: MetricKind, n: usize) -> tstbench::Result<(NullDistribution, CacheStatus, PathBuf)> {
        let key = self.null_key(metric, n);
        let cfg = &self.config;
        let stream = RngStream::new(cfg.master_seed, null_stream_label(metric, n), 0);
        load_or_build(&self.cache, &key, || {
            info!("building {metric} null at n={n} ({} iterations)", cfg.null_iterations);
            match &self.source {
                Source::Model(m) => {
                    estimate_null_generator(m, metric, &cfg.metric_config, n, cfg.null_iterations, &stream)
                }
                Source::Dataset { prepared, .. } => estimate_null_bootstrap_with(
                    &prepared.statistic_space(cfg.scale_features),
                    metric,
                    &cfg.metric_config,
                    n,
                    cfg.null_iterations,
                    &stream,
                    cfg.with_replacement,
                ),
            }
        })
    }

    pub fn problem(&self, deform: DeformKind, metric: MetricKind, n: usize) -> ScanProblem {
        let source = match &self.source {
            Source::Model(m) => ScanSource::Model(m.clone()),
            Source::Dataset { prepared, .. } => ScanSource::Dataset(prepared.clone()),
        };
        let cfg = &self.config;
        let mut p = ScanProblem::new(source, deform, metric, n);
        p.cfg = cfg.metric_config.clone();
        p.reps = cfg.reps;
        p.eps_max = cfg.eps_max;
        p.tolerance = cfg.tolerance;
        p.relaxed_tolerance = cfg.relaxed_tolerance;
        p.max_iterations = cfg.max_iterations;
        p.scale_features = cfg.scale_features;
        p.with_replacement = cfg.with_replacement;
        p.llr_null_iterations = cfg.llr_iterations();
        p
    }

    pub fn write_null_index(&self, entries: &[NullIndexEntry]) -> std::io::Result<()> {
        fs::create_dir_all(&self.output)?;
        write_atomic(&self.output.join(NULL_INDEX), &serde_json::to_vec_pretty(entries)?)
    }
}

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
