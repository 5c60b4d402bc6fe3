//! Null distributions of the test statistics and the quantities derived from
//! them: rejection thresholds, p-values and Z-scores.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataio::{bootstrap_indices, split_half_indices};
use crate::deformations::Deformation;
use crate::ecdf::sort_values;
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::models::ModelSpec;
use crate::rng::RngStream;
use crate::statistics::{evaluate, llr, MetricConfig, MetricKind};

/// Z-score reported for `p = 1`, where the normal quantile is `−∞`.
pub const Z_SENTINEL: f64 = -38.0;

/// Below this many values in the tail, thresholds are flagged as unreliable.
const MIN_TAIL_COUNT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullSource {
    Generator,
    Bootstrap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    /// Ascending.
    #[serde(skip)]
    pub values: Vec<f64>,
    pub iterations: usize,
    pub metric: MetricKind,
    pub n: usize,
    pub m: usize,
    pub source: NullSource,
    pub epsilon: Option<f64>,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CLThreshold {
    pub alpha: f64,
    pub t_alpha: f64,
    /// Fewer than ten null values lie in the tail, or none at all.
    pub insufficient_tail: bool,
}

impl NullDistribution {
    pub fn from_values(
        mut values: Vec<f64>,
        metric: MetricKind,
        n: usize,
        m: usize,
        source: NullSource,
        epsilon: Option<f64>,
        elapsed_seconds: f64,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, found: 0 });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: i, col: 0 });
        }
        sort_values(&mut values);
        Ok(Self {
            iterations: values.len(),
            values,
            metric,
            n,
            m,
            source,
            epsilon,
            elapsed_seconds,
        })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn threshold(&self, alpha: f64) -> Result<CLThreshold> {
        threshold(self, alpha)
    }

    pub fn p_value(&self, t_obs: f64) -> f64 {
        p_value(self, t_obs)
    }

    /// Writes `iteration,value` rows (in ascending value order) to `csv_path`
    /// and the metadata next to it; see [`metadata_path`].
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::Io(e.into()))?;
        w.write_record(["iteration", "value"]).map_err(|e| Error::Io(e.into()))?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()]).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        let meta = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.into()))?;
        fs::write(metadata_path(csv_path), meta)?;
        Ok(())
    }

    /// Reads a distribution written by [`NullDistribution::save`], checking
    /// that both files agree.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta = fs::read_to_string(metadata_path(csv_path))?;
        let mut null: NullDistribution = serde_json::from_str(&meta).map_err(|e| Error::Parse {
            row: e.line(),
            col: e.column(),
            msg: format!("null metadata: {e}"),
        })?;
        let mut r = csv::Reader::from_path(csv_path).map_err(|e| Error::Io(e.into()))?;
        let mut values = Vec::with_capacity(null.iterations);
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse { row, col: 0, msg: e.to_string() })?;
            let field = rec.get(1).ok_or_else(|| Error::Parse { row, col: 1, msg: "missing value".into() })?;
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse { row, col: 1, msg: format!("not a number: '{field}'") })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row, col: 1 });
            }
            values.push(v);
        }
        if values.len() != null.iterations || values.is_empty() {
            return Err(Error::Parse {
                row: values.len(),
                col: 0,
                msg: format!("expected {} values, found {}", null.iterations, values.len()),
            });
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Parse { row: 0, col: 1, msg: "values are not sorted".into() });
        }
        null.values = values;
        Ok(null)
    }
}

/// Sidecar path holding the JSON metadata of a saved null distribution.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

fn iteration_stream(stream: &RngStream, i: usize) -> RngStream {
    stream.child("null-iter", i as u64)
}

/// Null distribution from `iters` independent pairs of size-`n` samples of `model`.
pub fn estimate_null_generator(
    model: &ModelSpec,
    metric: MetricKind,
    cfg: &MetricConfig,
    n: usize,
    iters: usize,
    stream: &RngStream,
) -> Result<NullDistribution> {
    if metric == MetricKind::LLR {
        return Err(Error::InvalidArgument("the LLR null depends on epsilon; use estimate_null_llr".into()));
    }
    if n < 2 || iters == 0 {
        return Err(Error::InvalidArgument(format!("need n >= 2 and iters >= 1, got n={n}, iters={iters}")));
    }
    let start = Instant::now();
    let values = (0..iters)
        .into_par_iter()
        .map(|i| {
            let s = iteration_stream(stream, i);
            let x = model.sample(n, &s.child("x", 0))?;
            let y = model.sample(n, &s.child("y", 0))?;
            evaluate(metric, &x, &y, cfg, &s.child("stat", 0))
        })
        .collect::<Result<Vec<f64>>>()?;
    NullDistribution::from_values(
        values,
        metric,
        n,
        n,
        NullSource::Generator,
        None,
        start.elapsed().as_secs_f64(),
    )
}

/// Split-half bootstrap null, resampling with replacement.
pub fn estimate_null_bootstrap(
    dataset: &DataMatrix,
    metric: MetricKind,
    cfg: &MetricConfig,
    n: usize,
    iters: usize,
    stream: &RngStream,
) -> Result<NullDistribution> {
    estimate_null_bootstrap_with(dataset, metric, cfg, n, iters, stream, true)
}

/// Split-half bootstrap null: every iteration reshuffles the dataset, splits it
/// in half and draws a size-`n` sample from each half.
pub fn estimate_null_bootstrap_with(
    dataset: &DataMatrix,
    metric: MetricKind,
    cfg: &MetricConfig,
    n: usize,
    iters: usize,
    stream: &RngStream,
    with_replacement: bool,
) -> Result<NullDistribution> {
    if metric == MetricKind::LLR {
        return Err(Error::InvalidArgument("LLR needs a generative model".into()));
    }
    if dataset.rows() < 2 {
        return Err(Error::TooFewPoints { needed: 2, found: dataset.rows() });
    }
    if n < 2 || iters == 0 {
        return Err(Error::InvalidArgument(format!("need n >= 2 and iters >= 1, got n={n}, iters={iters}")));
    }
    let start = Instant::now();
    let values = (0..iters)
        .into_par_iter()
        .map(|i| {
            let s = iteration_stream(stream, i);
            let (x, y) = split_half_pair(dataset, n, &s, with_replacement)?;
            evaluate(metric, &x, &y, cfg, &s.child("stat", 0))
        })
        .collect::<Result<Vec<f64>>>()?;
    NullDistribution::from_values(
        values,
        metric,
        n,
        n,
        NullSource::Bootstrap,
        None,
        start.elapsed().as_secs_f64(),
    )
}

/// One split-half bootstrap pair drawn from the stream of an iteration.
pub(crate) fn split_half_pair(
    dataset: &DataMatrix,
    n: usize,
    s: &RngStream,
    with_replacement: bool,
) -> Result<(DataMatrix, DataMatrix)> {
    let (a, b) = split_half_indices(dataset.rows(), &mut s.child("split", 0).rng());
    let ia = bootstrap_indices(a.len(), n, with_replacement, &mut s.child("x", 0).rng())?;
    let ib = bootstrap_indices(b.len(), n, with_replacement, &mut s.child("y", 0).rng())?;
    let pick = |half: &[usize], idx: Vec<usize>| {
        let rows: Vec<usize> = idx.into_iter().map(|k| half[k]).collect();
        dataset.select_rows(&rows)
    };
    Ok((pick(&a, ia), pick(&b, ib)))
}

/// Null distribution of the LLR at the deformation's ε: `iters` samples of
/// size `m` from the reference model.
pub fn estimate_null_llr(
    model: &ModelSpec,
    def: &Deformation,
    m: usize,
    iters: usize,
    stream: &RngStream,
) -> Result<NullDistribution> {
    if !def.kind.is_bijective() {
        return Err(Error::NotInvertible(def.kind.name()));
    }
    if m == 0 || iters == 0 {
        return Err(Error::InvalidArgument(format!("need m >= 1 and iters >= 1, got m={m}, iters={iters}")));
    }
    let start = Instant::now();
    let values = (0..iters)
        .into_par_iter()
        .map(|i| {
            let y = model.sample(m, &iteration_stream(stream, i).child("y", 0))?;
            llr(model, def, &y)
        })
        .collect::<Result<Vec<f64>>>()?;
    NullDistribution::from_values(
        values,
        MetricKind::LLR,
        m,
        m,
        NullSource::Generator,
        Some(def.epsilon),
        start.elapsed().as_secs_f64(),
    )
}

/// Smallest null value `t` with `#{values ≥ t} ≤ α·N`.
///
/// When even the maximum has too many values at or above it (heavy ties, or
/// `α·N < 1`) the maximum is returned and the result is flagged.
pub fn threshold(null: &NullDistribution, alpha: f64) -> Result<CLThreshold> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let v = &null.values;
    let total = v.len();
    let tail = alpha * total as f64;
    // Guard against α·N landing a rounding error below an integer.
    let allowed = (tail + 1e-9).floor() as usize;
    let mut insufficient = tail < MIN_TAIL_COUNT;
    let t_alpha = if allowed == 0 {
        insufficient = true;
        v[total - 1]
    } else {
        let mut k = total - allowed;
        // Ties: #{values ≥ v[k]} counts every copy of v[k].
        let first = v.partition_point(|&x| x < v[k]);
        if total - first > allowed {
            k = v.partition_point(|&x| x <= v[k]);
        }
        if k == total {
            insufficient = true;
            v[total - 1]
        } else {
            v[k]
        }
    };
    if insufficient {
        warn!(
            "{} null with {total} values has fewer than {MIN_TAIL_COUNT} values beyond the alpha={alpha} threshold",
            null.metric
        );
    }
    Ok(CLThreshold { alpha, t_alpha, insufficient_tail: insufficient })
}

/// `(1 + #{values ≥ t_obs}) / (1 + N)`, never zero.
pub fn p_value(null: &NullDistribution, t_obs: f64) -> f64 {
    let v = &null.values;
    let at_least = v.len() - v.partition_point(|&x| x < t_obs);
    (1 + at_least) as f64 / (1 + v.len()) as f64
}

/// `Φ⁻¹(1 − p)`, evaluated as `−Φ⁻¹(p)` to keep precision for small `p`.
/// `p = 1` maps to [`Z_SENTINEL`].
pub fn z_score(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("p must lie in (0, 1], got {p}")));
    }
    if p == 1.0 {
        return Ok(Z_SENTINEL);
    }
    let std = Normal::standard();
    Ok((-std.inverse_cdf(p)).max(Z_SENTINEL))
}
