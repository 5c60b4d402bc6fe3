//! The two-sample test statistics and their supporting numerics.
//!
//! | metric | definition |
//! |--------|------------|
//! | `SW` | mean over K random directions of the sorted-pairing 1-Wasserstein distance |
//! | `MeanKS` | mean over features of the scaled two-sample KS statistic |
//! | `SlicedKS` | mean over K random directions of the scaled KS statistic |
//! | `MMD` | unbiased squared MMD with the quartic polynomial kernel |
//! | `FGD` | Fréchet Gaussian distance extrapolated to infinite sample size |
//! | `LLR` | `-2 log` likelihood ratio of the reference against a deformed model |
//!
//! All statistics are deterministic given their inputs and stream. Internal
//! parallel loops reduce in a fixed order, so results do not depend on the
//! number of worker threads.

mod fgd;
mod kolmogorov;
mod ks;
mod llr;
mod mmd;
mod wasserstein;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecdf::{sort_values, SortedSample};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::rng::RngStream;
use crate::sphere::sample_unit_directions;

pub use fgd::{fgd_finite, fgd_from_summaries, fgd_inf, gaussian_summary, trace_sqrt_product, GaussianSummary};
pub use kolmogorov::{kolmogorov_cdf, kolmogorov_pdf};
pub use ks::{ks_1d, mean_ks, sliced_ks};
pub use llr::{llr, LLR_SATURATION};
pub use mmd::{mmd_unbiased, poly_kernel};
pub use wasserstein::{sliced_wasserstein, wasserstein_1d_sorted};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    SW,
    MeanKS,
    SlicedKS,
    MMD,
    FGD,
    LLR,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::SW,
        MetricKind::MeanKS,
        MetricKind::SlicedKS,
        MetricKind::MMD,
        MetricKind::FGD,
        MetricKind::LLR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::SW => "SW",
            MetricKind::MeanKS => "MeanKS",
            MetricKind::SlicedKS => "SlicedKS",
            MetricKind::MMD => "MMD",
            MetricKind::FGD => "FGD",
            MetricKind::LLR => "LLR",
        }
    }

    /// KS-family statistics, whose null is compared with the Kolmogorov law.
    pub fn is_ks_family(self) -> bool {
        matches!(self, MetricKind::MeanKS | MetricKind::SlicedKS)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Number of random slices for SW and SlicedKS.
    #[serde(rename = "K")]
    pub slices: usize,
    /// Subsample fractions `f`; FGD is evaluated on subsamples of size `⌊n/f⌋`.
    pub fgd_fit_fractions: Vec<f64>,
    pub fgd_draws_per_size: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            slices: 100,
            fgd_fit_fractions: vec![1.0, 1.25, 1.5, 1.75, 2.0],
            fgd_draws_per_size: 5,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slices == 0 {
            return Err(Error::InvalidArgument("K must be >= 1".into()));
        }
        if self.fgd_draws_per_size == 0 {
            return Err(Error::InvalidArgument("fgd_draws_per_size must be >= 1".into()));
        }
        let fr = &self.fgd_fit_fractions;
        if fr.iter().any(|f| !(*f >= 1.0) || !f.is_finite()) {
            return Err(Error::InvalidArgument("FGD fit fractions must be >= 1".into()));
        }
        if !fr.contains(&1.0) {
            return Err(Error::InvalidArgument("FGD fit fractions must include 1.0".into()));
        }
        for (i, a) in fr.iter().enumerate() {
            if fr[i + 1..].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate FGD fit fraction {a}")));
            }
        }
        Ok(())
    }

    /// Largest fit fraction, which fixes the smallest FGD subsample.
    pub fn max_fraction(&self) -> f64 {
        self.fgd_fit_fractions.iter().copied().fold(1.0, f64::max)
    }
}

/// Evaluates a sample-only statistic. `LLR` needs the reference model and is
/// computed with [`llr`] instead.
pub fn evaluate(
    metric: MetricKind,
    x: &DataMatrix,
    y: &DataMatrix,
    cfg: &MetricConfig,
    stream: &RngStream,
) -> Result<f64> {
    match metric {
        MetricKind::SW => sliced_wasserstein(x, y, cfg, stream),
        MetricKind::MeanKS => mean_ks(x, y),
        MetricKind::SlicedKS => sliced_ks(x, y, cfg, stream),
        MetricKind::MMD => mmd_unbiased(x, y),
        MetricKind::FGD => fgd_inf(x, y, cfg, stream),
        MetricKind::LLR => Err(Error::InvalidArgument(
            "LLR needs the reference model and deformation; use statistics::llr".into(),
        )),
    }
}

/// Sum by recursive halving; error grows as O(log n) rather than O(n).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Averages `stat` over `K` random directions of the projected, sorted samples.
pub(crate) fn sliced_mean<F>(
    x: &DataMatrix,
    y: &DataMatrix,
    slices: usize,
    stream: &RngStream,
    stat: F,
) -> Result<f64>
where
    F: Fn(&SortedSample, &SortedSample) -> Result<f64> + Sync,
{
    x.check_same_dim(y)?;
    let dirs = sample_unit_directions(x.cols(), slices, stream)?;
    let per_slice: Vec<f64> = (0..slices)
        .into_par_iter()
        .map(|k| {
            let theta = dirs.row(k);
            let mut px = x.project(theta);
            let mut py = y.project(theta);
            sort_values(&mut px);
            sort_values(&mut py);
            stat(&SortedSample::from_sorted(px), &SortedSample::from_sorted(py))
        })
        .collect::<Result<_>>()?;
    Ok(per_slice.iter().sum::<f64>() / slices as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        MetricConfig::default().validate().unwrap();
        let mut c = MetricConfig::default();
        c.fgd_fit_fractions = vec![1.5, 2.0];
        assert!(c.validate().is_err());
        c.fgd_fit_fractions = vec![1.0, 2.0, 2.0];
        assert!(c.validate().is_err());
        c.fgd_fit_fractions = vec![1.0, 0.5];
        assert!(c.validate().is_err());
        c = MetricConfig { slices: 0, ..MetricConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_uses_k() {
        let c: MetricConfig = serde_json::from_str(r#"{"K": 7}"#).unwrap();
        assert_eq!(c.slices, 7);
        assert_eq!(c.fgd_draws_per_size, 5);
    }

    #[test]
    fn pairwise_sum_matches_exact_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("slicedks".parse::<MetricKind>().unwrap(), MetricKind::SlicedKS);
        assert!("KL".parse::<MetricKind>().is_err());
    }
}
