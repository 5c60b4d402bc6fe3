//! Bisection search for the smallest deformation strength `ε_α` at which the
//! mean alternative statistic reaches the null threshold.
//!
//! Three crossings are searched per confidence level, sharing one cache of
//! alternative evaluations:
//!
//! * `μ_t(ε) = t_α` gives `ε_α`,
//! * `μ_t(ε) + σ_t(ε) = t_α` gives the lower bound,
//! * `μ_t(ε) − σ_t(ε) = t_α` gives the upper bound.
//!
//! Every probe at any ε reuses the same per-repetition random streams, so
//! `μ_t(ε)` varies smoothly with ε and the crossing is well defined.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::ScaleInfo;
use crate::deformations::{make_deformation, DeformKind, Deformation};
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::models::ModelSpec;
use crate::nulls::{estimate_null_llr, split_half_pair, threshold, NullDistribution};
use crate::rng::RngStream;
use crate::statistics::{evaluate, llr, MetricConfig, MetricKind};

/// A dataset prepared for split-half experiments.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    /// Zero-mean, unit-variance features; deformations act here.
    pub standardized: DataMatrix,
    pub scale: ScaleInfo,
}

impl PreparedDataset {
    pub fn new(original: &DataMatrix) -> Result<Self> {
        let scale = ScaleInfo::fit(original)?;
        Ok(Self { standardized: scale.standardize(original), scale })
    }

    /// The matrix the statistics see: standardized, or mapped back to the
    /// original scale.
    pub fn statistic_space(&self, scale_features: bool) -> DataMatrix {
        if scale_features {
            self.standardized.clone()
        } else {
            self.scale.destandardize(&self.standardized)
        }
    }
}

#[derive(Clone, Debug)]
pub enum ScanSource {
    Model(ModelSpec),
    Dataset(PreparedDataset),
}

impl ScanSource {
    pub fn dim(&self) -> usize {
        match self {
            ScanSource::Model(m) => m.dim(),
            ScanSource::Dataset(d) => d.standardized.cols(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScanProblem {
    pub source: ScanSource,
    pub deform: DeformKind,
    pub metric: MetricKind,
    pub cfg: MetricConfig,
    pub n: usize,
    pub reps: usize,
    pub eps_max: f64,
    /// Relative tolerance on both the ε bracket and the threshold gap.
    pub tolerance: f64,
    /// Fallback tolerance accepted once `max_iterations` is exhausted.
    pub relaxed_tolerance: f64,
    pub max_iterations: usize,
    /// Dataset mode: compute statistics on standardized features.
    pub scale_features: bool,
    /// Dataset mode: bootstrap draws with replacement.
    pub with_replacement: bool,
    /// Size of the LLR null refreshed at every probed ε.
    pub llr_null_iterations: usize,
}

impl ScanProblem {
    pub fn new(source: ScanSource, deform: DeformKind, metric: MetricKind, n: usize) -> Self {
        Self {
            source,
            deform,
            metric,
            cfg: MetricConfig::default(),
            n,
            reps: 100,
            eps_max: 2.0,
            tolerance: 1e-2,
            relaxed_tolerance: 5e-2,
            max_iterations: 40,
            scale_features: false,
            with_replacement: true,
            llr_null_iterations: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidArgument("reps must be >= 2".into()));
        }
        if !(self.eps_max > 0.0) || !(self.tolerance > 0.0) || self.relaxed_tolerance < self.tolerance {
            return Err(Error::InvalidArgument(
                "need eps_max > 0 and 0 < tolerance <= relaxed_tolerance".into(),
            ));
        }
        if self.n < 2 {
            return Err(Error::TooFewPoints { needed: 2, found: self.n });
        }
        if self.metric == MetricKind::LLR {
            if !self.deform.is_bijective() {
                return Err(Error::NotInvertible(self.deform.name()));
            }
            if matches!(self.source, ScanSource::Dataset(_)) {
                return Err(Error::InvalidArgument("LLR needs a generative model".into()));
            }
        }
        self.cfg.validate()
    }

    fn settings(&self) -> BisectSettings {
        BisectSettings {
            eps_max: self.eps_max,
            eps_cap: self.deform.epsilon_limit(),
            tolerance: self.tolerance,
            relaxed_tolerance: self.relaxed_tolerance,
            max_iterations: self.max_iterations,
            max_doublings: 3,
        }
    }
}

/// Mean and sample standard deviation of the statistic over `reps`
/// alternative tests at one ε.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltEvaluation {
    pub epsilon: f64,
    pub mean: f64,
    pub std: f64,
    pub reps: usize,
}

impl AltEvaluation {
    pub fn from_values(epsilon: f64, values: &[f64]) -> Result<Self> {
        let k = values.len();
        if k < 2 {
            return Err(Error::TooFewPoints { needed: 2, found: k });
        }
        let mean = values.iter().map(|v| v / k as f64).sum::<f64>();
        // Rescaled so that saturated LLR values do not overflow the squares.
        let scale = values.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
        let std = if scale > 0.0 {
            let ss = values.iter().map(|v| ((v - mean) / scale).powi(2)).sum::<f64>();
            scale * (ss / (k - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { epsilon, mean, std, reps: k })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBound {
    pub alpha: f64,
    pub eps: f64,
    pub eps_low: f64,
    pub eps_up: f64,
    pub evaluations: Vec<AltEvaluation>,
    pub elapsed_seconds: f64,
    pub converged: bool,
    /// Converged only under the relaxed tolerance.
    pub relaxed: bool,
    /// Cached means decreased by more than two standard deviations somewhere.
    pub non_monotone: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BisectSettings {
    pub eps_max: f64,
    /// Deformation strengths must stay strictly below this value.
    pub eps_cap: Option<f64>,
    pub tolerance: f64,
    pub relaxed_tolerance: f64,
    pub max_iterations: usize,
    pub max_doublings: usize,
}

impl Default for BisectSettings {
    fn default() -> Self {
        Self {
            eps_max: 2.0,
            eps_cap: None,
            tolerance: 1e-2,
            relaxed_tolerance: 5e-2,
            max_iterations: 40,
            max_doublings: 3,
        }
    }
}

/// One probed ε: the alternative evaluation and, for the LLR, the null
/// distribution at that ε.
#[derive(Clone, Debug)]
pub struct Probe {
    pub eval: AltEvaluation,
    pub null: Option<NullDistribution>,
}

struct Crossing {
    eps: f64,
    converged: bool,
    relaxed: bool,
}

/// Bisection engine with a cache of probed points shared by all searches.
pub struct Bisector<P> {
    probe: P,
    /// Sorted by ε.
    points: Vec<Probe>,
    settings: BisectSettings,
}

impl<P> Bisector<P>
where
    P: FnMut(f64) -> Result<Probe>,
{
    pub fn new(probe: P, settings: BisectSettings) -> Self {
        Self { probe, points: Vec::new(), settings }
    }

    pub fn evaluations(&self) -> Vec<AltEvaluation> {
        self.points.iter().map(|p| p.eval).collect()
    }

    fn point(&mut self, eps: f64) -> Result<&Probe> {
        let pos = self.points.partition_point(|p| p.eval.epsilon < eps);
        if pos == self.points.len() || self.points[pos].eval.epsilon != eps {
            let probe = (self.probe)(eps)?;
            self.points.insert(pos, probe);
        }
        Ok(&self.points[pos])
    }

    /// Searches the three crossings for the threshold `t_alpha(probe)`.
    pub fn bound<T>(&mut self, alpha: f64, t_alpha: T) -> Result<EpsilonBound>
    where
        T: Fn(&Probe) -> Result<f64>,
    {
        let start = Instant::now();
        let center = self.solve(&t_alpha, 0.0)?;
        let low = self.solve(&t_alpha, 1.0)?;
        let up = self.solve(&t_alpha, -1.0)?;
        let non_monotone = self.non_monotone();
        if non_monotone {
            warn!("alternative means are not monotone in epsilon beyond 2 sigma; bisection used the means as they are");
        }
        Ok(EpsilonBound {
            alpha,
            eps: center.eps,
            eps_low: low.eps,
            eps_up: up.eps,
            evaluations: self.evaluations(),
            elapsed_seconds: start.elapsed().as_secs_f64(),
            converged: center.converged && low.converged && up.converged,
            relaxed: center.relaxed || low.relaxed || up.relaxed,
            non_monotone,
        })
    }

    fn non_monotone(&self) -> bool {
        let e = &self.points;
        (0..e.len()).any(|i| {
            (i + 1..e.len()).any(|j| {
                let (a, b) = (e[i].eval, e[j].eval);
                a.mean - b.mean > 2.0 * a.std.max(b.std)
            })
        })
    }

    fn eps_cap(&self, eps: f64) -> f64 {
        match self.settings.eps_cap {
            Some(cap) => eps.min(cap * (1.0 - 1e-6)),
            None => eps,
        }
    }

    /// Finds the crossing of `g(ε) = μ + kσ − t_α(ε)`, positive meaning rejected.
    fn solve<T>(&mut self, t_alpha: &T, k: f64) -> Result<Crossing>
    where
        T: Fn(&Probe) -> Result<f64>,
    {
        let gap = |p: &Probe| -> Result<(f64, f64)> {
            let t = t_alpha(p)?;
            Ok((p.eval.mean + k * p.eval.std - t, t.abs()))
        };

        let (g0, _) = gap(self.point(0.0)?)?;
        if g0 > 0.0 {
            return Ok(Crossing { eps: 0.0, converged: true, relaxed: false });
        }

        // Upper end: first probe past the last non-rejected cached point.
        let mut hi = self.eps_cap(self.settings.eps_max);
        let mut g_hi = gap(self.point(hi)?)?;
        let mut doublings = 0;
        while g_hi.0 <= 0.0 {
            let next = self.eps_cap(hi * 2.0);
            if doublings == self.settings.max_doublings || next <= hi {
                warn!("statistic stays below the threshold up to epsilon = {hi}");
                return Ok(Crossing { eps: hi, converged: false, relaxed: false });
            }
            doublings += 1;
            hi = next;
            g_hi = gap(self.point(hi)?)?;
        }

        // Tightest bracket already known from the cache.
        let (mut lo, mut g_lo) = (0.0, (g0, 0.0));
        let mut found_hi = None;
        for p in &self.points {
            if p.eval.epsilon > hi {
                break;
            }
            let g = gap(p)?;
            if g.0 > 0.0 {
                found_hi = Some((p.eval.epsilon, g));
                break;
            }
            lo = p.eval.epsilon;
            g_lo = g;
        }
        if let Some((e, g)) = found_hi {
            hi = e;
            g_hi = g;
        }

        let within = |tol: f64, lo: f64, hi: f64, g_lo: (f64, f64), g_hi: (f64, f64)| {
            let width = (hi - lo) / hi;
            let rel = |g: (f64, f64)| g.0.abs() / g.1.max(f64::MIN_POSITIVE);
            width < tol && rel(g_lo).min(rel(g_hi)) < tol
        };

        let mut converged = false;
        let mut relaxed = false;
        for _ in 0..self.settings.max_iterations {
            if within(self.settings.tolerance, lo, hi, g_lo, g_hi) {
                converged = true;
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let g = gap(self.point(mid)?)?;
            if g.0 > 0.0 {
                hi = mid;
                g_hi = g;
            } else {
                lo = mid;
                g_lo = g;
            }
        }
        if !converged {
            if within(self.settings.tolerance, lo, hi, g_lo, g_hi) {
                converged = true;
            } else if within(self.settings.relaxed_tolerance, lo, hi, g_lo, g_hi) {
                converged = true;
                relaxed = true;
            }
        }
        // Linear interpolation of g inside the final bracket.
        let eps = lo + (hi - lo) * (-g_lo.0) / (g_hi.0 - g_lo.0);
        Ok(Crossing { eps: eps.clamp(lo, hi), converged, relaxed })
    }
}

/// The deformation family of a scan at ε = 0, frozen by the scan stream.
pub fn scan_deformation(problem: &ScanProblem, stream: &RngStream) -> Result<Deformation> {
    let mean = match &problem.source {
        ScanSource::Model(m) => m.mean(),
        ScanSource::Dataset(d) => vec![0.0; d.standardized.cols()],
    };
    make_deformation(problem.deform, 0.0, &mean, &stream.child("deform", 0))
}

fn alternative_values(problem: &ScanProblem, def: &Deformation, stream: &RngStream) -> Result<Vec<f64>> {
    (0..problem.reps)
        .into_par_iter()
        .map(|r| {
            let s = stream.child("rep", r as u64);
            let iteration = r as u64;
            match &problem.source {
                ScanSource::Model(model) => {
                    let y = def.apply(&model.sample(problem.n, &s.child("y", 0))?, iteration)?;
                    if problem.metric == MetricKind::LLR {
                        return llr(model, def, &y);
                    }
                    let x = model.sample(problem.n, &s.child("x", 0))?;
                    evaluate(problem.metric, &x, &y, &problem.cfg, &s.child("stat", 0))
                }
                ScanSource::Dataset(data) => {
                    let (x, y0) = split_half_pair(&data.standardized, problem.n, &s, problem.with_replacement)?;
                    let y = def.apply(&y0, iteration)?;
                    let (x, y) = if problem.scale_features {
                        (x, y)
                    } else {
                        (data.scale.destandardize(&x), data.scale.destandardize(&y))
                    };
                    evaluate(problem.metric, &x, &y, &problem.cfg, &s.child("stat", 0))
                }
            }
        })
        .collect()
}

/// `reps` alternative tests at `epsilon`.
pub fn evaluate_alternative(problem: &ScanProblem, epsilon: f64, stream: &RngStream) -> Result<AltEvaluation> {
    let def = scan_deformation(problem, stream)?.at(epsilon)?;
    AltEvaluation::from_values(epsilon, &alternative_values(problem, &def, stream)?)
}

/// Scans every confidence level in `alphas`, sharing probes between them.
///
/// `null` is required for all metrics but the LLR, whose null is rebuilt at
/// every probed ε from the reference model.
pub fn scan_alphas(
    problem: &ScanProblem,
    null: Option<&NullDistribution>,
    alphas: &[f64],
    stream: &RngStream,
) -> Result<Vec<EpsilonBound>> {
    problem.validate()?;
    let family = scan_deformation(problem, stream)?;
    let is_llr = problem.metric == MetricKind::LLR;
    let model = match (&problem.source, is_llr) {
        (ScanSource::Model(m), true) => Some(m),
        _ => None,
    };
    if !is_llr {
        let null = null.ok_or_else(|| Error::InvalidArgument("a null distribution is required".into()))?;
        if null.metric != problem.metric || null.n != problem.n {
            return Err(Error::InvalidArgument(format!(
                "null is for ({}, n={}), scan is for ({}, n={})",
                null.metric, null.n, problem.metric, problem.n
            )));
        }
    }
    let null_stream = stream.child("llr-null", 0);
    let probe = |eps: f64| -> Result<Probe> {
        let def = family.at(eps)?;
        let eval = AltEvaluation::from_values(eps, &alternative_values(problem, &def, stream)?)?;
        let null = match model {
            Some(m) => Some(estimate_null_llr(m, &def, problem.n, problem.llr_null_iterations, &null_stream)?),
            None => None,
        };
        Ok(Probe { eval, null })
    };
    let mut bisector = Bisector::new(probe, problem.settings());
    alphas
        .iter()
        .map(|&alpha| {
            let fixed = match null {
                Some(nd) if !is_llr => Some(threshold(nd, alpha)?.t_alpha),
                _ => None,
            };
            bisector.bound(alpha, |p: &Probe| match (fixed, &p.null) {
                (Some(t), _) => Ok(t),
                (None, Some(nd)) => Ok(threshold(nd, alpha)?.t_alpha),
                (None, None) => Err(Error::InvalidArgument("missing null distribution".into())),
            })
        })
        .collect()
}

/// `ε_α` against a fixed null distribution.
pub fn bisect_epsilon(
    problem: &ScanProblem,
    null: &NullDistribution,
    alpha: f64,
    stream: &RngStream,
) -> Result<EpsilonBound> {
    if problem.metric == MetricKind::LLR {
        return Err(Error::InvalidArgument("use bisect_epsilon_llr for the LLR".into()));
    }
    Ok(scan_alphas(problem, Some(null), &[alpha], stream)?.remove(0))
}

/// `ε_α` for the LLR, refreshing the null threshold at every probed ε.
pub fn bisect_epsilon_llr(problem: &ScanProblem, alpha: f64, stream: &RngStream) -> Result<EpsilonBound> {
    if problem.metric != MetricKind::LLR {
        return Err(Error::InvalidArgument("bisect_epsilon_llr needs metric LLR".into()));
    }
    Ok(scan_alphas(problem, None, &[alpha], stream)?.remove(0))
}
