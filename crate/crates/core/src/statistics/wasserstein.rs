use crate::ecdf::SortedSample;
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::rng::RngStream;

use super::{sliced_mean, MetricConfig};

/// 1-Wasserstein distance of two equal-size samples: `(1/n) Σ |x_(i) − y_(i)|`.
pub fn wasserstein_1d_sorted(xs: &SortedSample, ys: &SortedSample) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::UnequalSizes(xs.len(), ys.len()));
    }
    let n = xs.len();
    let total: f64 = xs
        .values()
        .iter()
        .zip(ys.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / n as f64)
}

/// Sliced Wasserstein distance over `cfg.slices` fresh random directions.
pub fn sliced_wasserstein(
    x: &DataMatrix,
    y: &DataMatrix,
    cfg: &MetricConfig,
    stream: &RngStream,
) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::UnequalSizes(x.rows(), y.rows()));
    }
    sliced_mean(x, y, cfg.slices, stream, wasserstein_1d_sorted)
}
