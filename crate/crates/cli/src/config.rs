//! Experiment configuration: a single versioned JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tstbench::dataio::DataFormat;
use tstbench::deformations::DeformKind;
use tstbench::models::{build_cg_scaled, build_mog, default_components, CgScale, ModelSpec};
use tstbench::rng::RngStream;
use tstbench::statistics::{MetricConfig, MetricKind};

pub const SCHEMA_VERSION: u32 = 1;

/// A configuration problem, located by a JSON pointer into the document.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{pointer}: {msg}")]
    Invalid { pointer: String, msg: String },
}

impl ConfigError {
    fn at(pointer: impl Into<String>, msg: impl Into<String>) -> Self {
        ConfigError::Invalid { pointer: pointer.into(), msg: msg.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cg,
    Mog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceConfig {
    /// A random reference model built from the master seed.
    Generated {
        family: Family,
        d: usize,
        /// Mixture components; defaults by dimension.
        #[serde(default)]
        components: Option<usize>,
        #[serde(default)]
        cg_scale: CgScale,
    },
    /// A fully specified model.
    Inline { model: ModelSpec },
    Dataset {
        path: PathBuf,
        #[serde(default)]
        format: Option<DataFormat>,
    },
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.01]
}
fn default_null_iterations() -> usize {
    1000
}
fn default_reps() -> usize {
    100
}
fn default_tolerance() -> f64 {
    1e-2
}
fn default_relaxed_tolerance() -> f64 {
    5e-2
}
fn default_eps_max() -> f64 {
    2.0
}
fn default_max_iterations() -> usize {
    40
}
fn default_true() -> bool {
    true
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("tstbench-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub source: SourceConfig,
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub metric_config: MetricConfig,
    pub deformations: Vec<DeformKind>,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_null_iterations")]
    pub null_iterations: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_relaxed_tolerance")]
    pub relaxed_tolerance: f64,
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Dataset sources: statistics see standardized features.
    #[serde(default)]
    pub scale_features: bool,
    /// Dataset sources: bootstrap draws with replacement.
    #[serde(default = "default_true")]
    pub with_replacement: bool,
    /// LLR null size at every probed ε; defaults to `null_iterations`.
    #[serde(default)]
    pub llr_null_iterations: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| ConfigError::at(pointer_of(e.path()), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_json(&text)?;
        // Dataset paths are relative to the config file.
        if let SourceConfig::Dataset { path: data, .. } = &mut cfg.source {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::at(
                "/schema_version",
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        for (name, empty) in [
            ("metrics", self.metrics.is_empty()),
            ("deformations", self.deformations.is_empty()),
            ("sample_sizes", self.sample_sizes.is_empty()),
            ("alphas", self.alphas.is_empty()),
        ] {
            if empty {
                return Err(ConfigError::at(format!("/{name}"), "must not be empty"));
            }
        }
        for (i, a) in self.alphas.iter().enumerate() {
            if !(*a > 0.0 && *a < 1.0) {
                return Err(ConfigError::at(format!("/alphas/{i}"), "alpha must lie in (0, 1)"));
            }
        }
        if self.null_iterations == 0 {
            return Err(ConfigError::at("/null_iterations", "must be >= 1"));
        }
        if self.llr_null_iterations == Some(0) {
            return Err(ConfigError::at("/llr_null_iterations", "must be >= 1"));
        }
        if self.reps < 2 {
            return Err(ConfigError::at("/reps", "must be >= 2"));
        }
        if !(self.tolerance > 0.0) {
            return Err(ConfigError::at("/tolerance", "must be > 0"));
        }
        if !(self.relaxed_tolerance >= self.tolerance) {
            return Err(ConfigError::at("/relaxed_tolerance", "must be >= tolerance"));
        }
        if !(self.eps_max > 0.0) || !self.eps_max.is_finite() {
            return Err(ConfigError::at("/eps_max", "must be a positive number"));
        }
        if self.max_iterations == 0 {
            return Err(ConfigError::at("/max_iterations", "must be >= 1"));
        }
        self.metric_config
            .validate()
            .map_err(|e| ConfigError::at("/metric_config", e.to_string()))?;

        let d = match &self.source {
            SourceConfig::Generated { d, components, .. } => {
                if *d == 0 {
                    return Err(ConfigError::at("/source/generated/d", "must be >= 1"));
                }
                if *components == Some(0) {
                    return Err(ConfigError::at("/source/generated/components", "must be >= 1"));
                }
                Some(*d)
            }
            SourceConfig::Inline { model } => {
                model.validate().map_err(|e| ConfigError::at("/source/inline/model", e.to_string()))?;
                Some(model.dim())
            }
            SourceConfig::Dataset { .. } => None,
        };
        if matches!(self.source, SourceConfig::Dataset { .. }) {
            if let Some(i) = self.metrics.iter().position(|m| *m == MetricKind::LLR) {
                return Err(ConfigError::at(
                    format!("/metrics/{i}"),
                    "LLR needs an analytic model and cannot run on a dataset",
                ));
            }
        }
        for (i, &n) in self.sample_sizes.iter().enumerate() {
            if n < 2 {
                return Err(ConfigError::at(format!("/sample_sizes/{i}"), "must be >= 2"));
            }
            if let Some(d) = d {
                if self.metrics.contains(&MetricKind::FGD) && n < d + 2 {
                    return Err(ConfigError::at(
                        format!("/sample_sizes/{i}"),
                        format!("FGD needs n >= d + 2 = {}, got {n}", d + 2),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn llr_iterations(&self) -> usize {
        self.llr_null_iterations.unwrap_or(self.null_iterations)
    }

    /// Builds a generated or inline reference model.
    pub fn model(&self) -> tstbench::Result<Option<ModelSpec>> {
        let stream = RngStream::new(self.master_seed, "model", 0);
        Ok(match &self.source {
            SourceConfig::Generated { family, d, components, cg_scale } => {
                let q = components.unwrap_or_else(|| default_components(*d));
                Some(match family {
                    Family::Cg => build_cg_scaled(*d, q, *cg_scale, &stream)?.into(),
                    Family::Mog => build_mog(*d, q, &stream)?.into(),
                })
            }
            SourceConfig::Inline { model } => Some(model.clone()),
            SourceConfig::Dataset { .. } => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "master_seed": 7,
            "source": {"generated": {"family": "cg", "d": 5}},
            "metrics": ["SW", "FGD"],
            "deformations": ["Mu"],
            "sample_sizes": [100]
        })
    }

    fn err_pointer(v: serde_json::Value) -> String {
        match ExperimentConfig::from_json(&v.to_string()) {
            Err(ConfigError::Invalid { pointer, .. }) => pointer,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(&minimal().to_string()).unwrap();
        assert_eq!(c.alphas, vec![0.05, 0.01]);
        assert_eq!(c.reps, 100);
        assert_eq!(c.metric_config, MetricConfig::default());
        assert!(c.with_replacement);
        assert_eq!(c.llr_iterations(), 1000);
    }

    #[test]
    fn schema_errors_carry_json_pointers() {
        let mut v = minimal();
        v["metrics"][1] = "XYZ".into();
        assert_eq!(err_pointer(v), "/metrics/1");

        let mut v = minimal();
        v["source"]["generated"]["d"] = "five".into();
        assert_eq!(err_pointer(v), "/source/generated/d");

        let mut v = minimal();
        v["schema_version"] = 2.into();
        assert_eq!(err_pointer(v), "/schema_version");

        let mut v = minimal();
        v["alphas"] = serde_json::json!([0.05, 1.5]);
        assert_eq!(err_pointer(v), "/alphas/1");
    }

    #[test]
    fn fgd_requires_d_plus_two() {
        let mut v = minimal();
        v["sample_sizes"] = serde_json::json!([100, 6]);
        assert_eq!(err_pointer(v.clone()), "/sample_sizes/1");
        v["metrics"] = serde_json::json!(["SW"]);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_ok());
    }

    #[test]
    fn empty_lists_rejected() {
        let mut v = minimal();
        v["deformations"] = serde_json::json!([]);
        assert_eq!(err_pointer(v), "/deformations");
    }

    #[test]
    fn llr_on_dataset_rejected() {
        let mut v = minimal();
        v["source"] = serde_json::json!({"dataset": {"path": "x.csv"}});
        v["metrics"] = serde_json::json!(["SW", "LLR"]);
        assert_eq!(err_pointer(v), "/metrics/1");
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = minimal();
        v["repz"] = 3.into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn generated_model_is_seeded() {
        let c = ExperimentConfig::from_json(&minimal().to_string()).unwrap();
        assert_eq!(c.model().unwrap(), c.model().unwrap());
        assert_eq!(c.model().unwrap().unwrap().dim(), 5);
    }
}
