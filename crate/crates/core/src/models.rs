//! Analytic reference distributions: diagonal-component Gaussian mixtures (MoG)
//! and correlated multivariate Gaussians (CG).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative eigenvalue floor applied before the Cholesky factorization.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoGSpec {
    pub d: usize,
    pub q: usize,
    /// `q × d` component means.
    pub means: Vec<Vec<f64>>,
    /// `q × d` component standard deviations (diagonal covariances).
    pub stds: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CGSpec {
    pub d: usize,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Lower-triangular `L` with `L Lᵀ = covariance`.
    pub cholesky_factor: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Mog(MoGSpec),
    Cg(CGSpec),
}

/// Component count used for a CG model of dimension `d` when none is given:
/// 3 up to d=5, 5 up to d=20, 10 beyond.
pub fn default_components(d: usize) -> usize {
    match d {
        0..=5 => 3,
        6..=20 => 5,
        _ => 10,
    }
}

/// Random MoG: means ~ U[-5,5], stds ~ U(0,1], weights uniform then normalized.
pub fn build_mog(d: usize, q: usize, stream: &RngStream) -> Result<MoGSpec> {
    if d == 0 || q == 0 {
        return Err(Error::InvalidArgument(format!(
            "MoG needs d >= 1 and q >= 1, got d={d}, q={q}"
        )));
    }
    let mut rng = stream.rng();
    let means = (0..q)
        .map(|_| (0..d).map(|_| rng.random_range(-5.0..=5.0)).collect())
        .collect();
    // 1 - U[0,1) lies in (0,1], so a zero std is never produced.
    let stds = (0..q)
        .map(|_| (0..d).map(|_| 1.0 - rng.random::<f64>()).collect())
        .collect();
    let raw: Vec<f64> = (0..q).map(|_| 1.0 - rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    Ok(MoGSpec {
        d,
        q,
        means,
        stds,
        weights,
    })
}

/// Which second-moment matrix of the source MoG a CG model inherits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CgScale {
    /// Unit marginal variances.
    #[default]
    Correlation,
    /// The MoG's own marginal scales (std of a few units per feature).
    Covariance,
}

/// CG model with the default component count for `d`.
pub fn build_cg(d: usize, stream: &RngStream) -> Result<CGSpec> {
    build_cg_with_components(d, default_components(d), stream)
}

/// CG model: mean ~ U[-5,5]; covariance is the analytic correlation matrix of
/// the MoG obtained from `build_mog(d, q, stream)`.
pub fn build_cg_with_components(d: usize, q: usize, stream: &RngStream) -> Result<CGSpec> {
    build_cg_scaled(d, q, CgScale::Correlation, stream)
}

pub fn build_cg_scaled(d: usize, q: usize, scale: CgScale, stream: &RngStream) -> Result<CGSpec> {
    let mog = build_mog(d, q, stream)?;
    let mut rng = stream.child("cg-mean", 0).rng();
    let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..=5.0)).collect();
    let cov = match scale {
        CgScale::Correlation => mog.correlation(),
        CgScale::Covariance => mog.covariance(),
    };
    cg_from_covariance(mean, cov)
}

/// Builds a CG spec from a mean and a covariance, enforcing symmetry and
/// positive definiteness before factorizing.
pub fn cg_from_covariance(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Result<CGSpec> {
    let d = mean.len();
    if d == 0 || covariance.len() != d || covariance.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: covariance.len(),
        });
    }
    let raw = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
    let sym = (&raw + raw.transpose()) * 0.5;
    let spd = floor_eigenvalues(sym)?;
    let chol = spd
        .clone()
        .cholesky()
        .ok_or_else(|| Error::FactorizationFailure("covariance is not positive definite".into()))?;
    let l = chol.l();
    Ok(CGSpec {
        d,
        mean,
        covariance: to_rows(&spd),
        cholesky_factor: to_rows(&l),
    })
}

fn floor_eigenvalues(sym: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::FactorizationFailure("non-finite covariance entry".into()));
    }
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    if max <= 0.0 {
        return Err(Error::FactorizationFailure(format!(
            "covariance has no positive eigenvalue (max {max})"
        )));
    }
    let floor = EIGEN_FLOOR * max;
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl MoGSpec {
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (acc, v) in m.iter_mut().zip(mu) {
                *acc += w * v;
            }
        }
        m
    }

    /// Mixture covariance from the first two moments:
    /// `Σ_k w_k (μ_k μ_kᵀ + diag σ_k²) − m mᵀ`.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let m = self.mean();
        let d = self.d;
        let mut cov = vec![vec![0.0; d]; d];
        for k in 0..self.q {
            let w = self.weights[k];
            let mu = &self.means[k];
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += w * mu[i] * mu[j];
                }
                cov[i][i] += w * self.stds[k][i] * self.stds[k][i];
            }
        }
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= m[i] * m[j];
            }
        }
        cov
    }

    pub fn correlation(&self) -> Vec<Vec<f64>> {
        let cov = self.covariance();
        let sd: Vec<f64> = (0..self.d).map(|i| cov[i][i].sqrt()).collect();
        (0..self.d)
            .map(|i| {
                (0..self.d)
                    .map(|j| if i == j { 1.0 } else { cov[i][j] / (sd[i] * sd[j]) })
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let shape_ok = self.q >= 1
            && self.d >= 1
            && self.means.len() == self.q
            && self.stds.len() == self.q
            && self.weights.len() == self.q
            && self.means.iter().all(|r| r.len() == self.d)
            && self.stds.iter().all(|r| r.len() == self.d);
        if !shape_ok {
            return Err(Error::InvalidArgument("MoG spec has inconsistent shapes".into()));
        }
        if self.stds.iter().flatten().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("MoG stds must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "MoG weights must be a probability vector (sum {total})"
            )));
        }
        Ok(())
    }

    fn sample_into(&self, n: usize, stream: &RngStream) -> Vec<f64> {
        let mut rng = stream.rng();
        let mut cumulative = Vec::with_capacity(self.q);
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        let mut values = Vec::with_capacity(n * self.d);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cumulative.partition_point(|&c| c <= u).min(self.q - 1);
            for (mu, sd) in self.means[k].iter().zip(&self.stds[k]) {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(mu + sd * z);
            }
        }
        values
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.q)
            .map(|k| {
                let mut lp = self.weights[k].ln();
                for ((xi, mu), sd) in x.iter().zip(&self.means[k]).zip(&self.stds[k]) {
                    let z = (xi - mu) / sd;
                    lp -= 0.5 * LN_2PI + sd.ln() + 0.5 * z * z;
                }
                lp
            })
            .collect();
        log_sum_exp(&terms)
    }
}

impl CGSpec {
    fn validate(&self) -> Result<()> {
        let d = self.d;
        let ok = d >= 1
            && self.mean.len() == d
            && self.covariance.len() == d
            && self.cholesky_factor.len() == d
            && self.covariance.iter().all(|r| r.len() == d)
            && self.cholesky_factor.iter().all(|r| r.len() == d);
        if !ok {
            return Err(Error::InvalidArgument("CG spec has inconsistent shapes".into()));
        }
        for i in 0..d {
            if !(self.cholesky_factor[i][i] > 0.0) {
                return Err(Error::FactorizationFailure(
                    "Cholesky factor must have a positive diagonal".into(),
                ));
            }
            for j in 0..i {
                if (self.covariance[i][j] - self.covariance[j][i]).abs() > 1e-10 {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        Ok(())
    }

    fn sample_into(&self, n: usize, stream: &RngStream) -> Vec<f64> {
        let d = self.d;
        let mut rng = stream.rng();
        let mut z = vec![0.0; d];
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            for i in 0..d {
                let row = &self.cholesky_factor[i];
                let mut acc = self.mean[i];
                for j in 0..=i {
                    acc += row[j] * z[j];
                }
                values.push(acc);
            }
        }
        values
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let l = &self.cholesky_factor;
        // Forward substitution L w = x - mean.
        let mut w = vec![0.0; d];
        let mut quad = 0.0;
        let mut log_det_half = 0.0;
        for i in 0..d {
            let mut acc = x[i] - self.mean[i];
            for j in 0..i {
                acc -= l[i][j] * w[j];
            }
            w[i] = acc / l[i][i];
            quad += w[i] * w[i];
            log_det_half += l[i][i].ln();
        }
        -0.5 * (d as f64 * LN_2PI + quad) - log_det_half
    }
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Mog(m) => m.d,
            ModelSpec::Cg(c) => c.d,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            ModelSpec::Mog(m) => m.mean(),
            ModelSpec::Cg(c) => c.mean.clone(),
        }
    }

    /// Short family tag used in result tables.
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Mog(_) => "MoG",
            ModelSpec::Cg(_) => "CG",
        }
    }

    /// Checks the structural invariants of a (possibly deserialized) spec.
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Mog(m) => m.validate(),
            ModelSpec::Cg(c) => c.validate(),
        }
    }

    /// `n` i.i.d. draws; a pure function of `stream`.
    pub fn sample(&self, n: usize, stream: &RngStream) -> Result<DataMatrix> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be >= 1".into()));
        }
        let values = match self {
            ModelSpec::Mog(m) => m.sample_into(n, stream),
            ModelSpec::Cg(c) => c.sample_into(n, stream),
        };
        Ok(DataMatrix::from_parts(n, self.dim(), values))
    }

    /// Exact log-density; panics in debug builds on a dimension mismatch.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            ModelSpec::Mog(m) => m.log_density(x),
            ModelSpec::Cg(c) => c.log_density(x),
        }
    }
}

impl From<MoGSpec> for ModelSpec {
    fn from(m: MoGSpec) -> Self {
        ModelSpec::Mog(m)
    }
}

impl From<CGSpec> for ModelSpec {
    fn from(c: CGSpec) -> Self {
        ModelSpec::Cg(c)
    }
}

pub fn sample(model: &ModelSpec, n: usize, stream: &RngStream) -> Result<DataMatrix> {
    model.sample(n, stream)
}

pub fn log_density(model: &ModelSpec, point: &[f64]) -> Result<f64> {
    if point.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: point.len(),
        });
    }
    Ok(model.log_density(point))
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s(seed: u64) -> RngStream {
        RngStream::new(seed, "model", 0)
    }

    fn cg1(mean: f64, var: f64) -> ModelSpec {
        cg_from_covariance(vec![mean], vec![vec![var]]).unwrap().into()
    }

    #[test]
    fn mog_ranges() {
        let m = build_mog(5, 3, &s(1)).unwrap();
        assert!(m.means.iter().flatten().all(|v| (-5.0..=5.0).contains(v)));
        assert!(m.stds.iter().flatten().all(|v| *v > 0.0 && *v <= 1.0));
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m, build_mog(5, 3, &s(1)).unwrap());
    }

    #[test]
    fn single_component_weight_is_one() {
        let m = build_mog(1, 1, &s(2)).unwrap();
        assert_eq!(m.weights, vec![1.0]);
    }

    #[test]
    fn cg_one_dimensional_is_unit() {
        let c = build_cg(1, &s(3)).unwrap();
        assert_eq!(c.covariance, vec![vec![1.0]]);
        assert_eq!(c.cholesky_factor, vec![vec![1.0]]);
    }

    #[test]
    fn covariance_scale_shares_correlation_structure() {
        let q = default_components(4);
        let a = build_cg_scaled(4, q, CgScale::Correlation, &s(9)).unwrap();
        let b = build_cg_scaled(4, q, CgScale::Covariance, &s(9)).unwrap();
        assert_eq!(a.mean, b.mean);
        let mog = build_mog(4, q, &s(9)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let sd = (b.covariance[i][i] * b.covariance[j][j]).sqrt();
                assert_abs_diff_eq!(b.covariance[i][j] / sd, a.covariance[i][j], epsilon = 1e-9);
                assert_abs_diff_eq!(b.covariance[i][j], mog.covariance()[i][j], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn cg_correlations_are_order_one() {
        let c = build_cg(5, &s(4)).unwrap();
        let mut max_off: f64 = 0.0;
        for i in 0..5 {
            assert!((c.covariance[i][i] - 1.0).abs() < 1e-12);
            for j in 0..5 {
                assert!(c.covariance[i][j].abs() <= 1.0 + 1e-12);
                if i != j {
                    max_off = max_off.max(c.covariance[i][j].abs());
                }
            }
        }
        assert!(max_off > 0.1, "largest |rho| = {max_off}");
    }

    #[test]
    fn non_spd_is_floored_not_rejected() {
        // Rank-deficient but PSD: the floor makes it factorizable.
        let c = cg_from_covariance(vec![0.0, 0.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(c.cholesky_factor[1][1] > 0.0);
        let bad = cg_from_covariance(vec![0.0], vec![vec![-1.0]]);
        assert!(matches!(bad, Err(Error::FactorizationFailure(_))));
    }

    #[test]
    fn standard_normal_mode() {
        let m = cg1(0.0, 1.0);
        assert_abs_diff_eq!(
            m.log_density(&[0.0]),
            -0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn symmetric_mixture_at_origin() {
        let a: f64 = 1.7;
        let m = ModelSpec::Mog(MoGSpec {
            d: 1,
            q: 2,
            means: vec![vec![-a], vec![a]],
            stds: vec![vec![1.0], vec![1.0]],
            weights: vec![0.5, 0.5],
        });
        let expected = ((-a * a / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert_abs_diff_eq!(m.log_density(&[0.0]), expected, epsilon = 1e-14);
    }

    #[test]
    fn densities_integrate_to_one() {
        let mog: ModelSpec = build_mog(1, 4, &s(5)).unwrap().into();
        let cg = cg1(0.3, 2.0);
        for m in [&mog, &cg] {
            let (lo, hi, steps) = (-15.0, 15.0, 60_000);
            let h = (hi - lo) / steps as f64;
            let total: f64 = (0..=steps)
                .map(|i| {
                    let x = lo + i as f64 * h;
                    let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                    w * m.log_density(&[x]).exp()
                })
                .sum::<f64>()
                * h;
            assert!((total - 1.0).abs() < 1e-3, "integral {total}");
        }
    }

    #[test]
    fn mog_log_density_finite_far_away() {
        let m: ModelSpec = build_mog(3, 3, &s(6)).unwrap().into();
        for x in [-50.0, 50.0] {
            assert!(m.log_density(&[x, -x, x]).is_finite());
        }
    }

    #[test]
    fn sample_shapes_and_degenerate_mixture() {
        let m: ModelSpec = build_mog(2, 1, &s(7)).unwrap().into();
        let x = m.sample(1, &s(8)).unwrap();
        assert_eq!((x.rows(), x.cols()), (1, 2));
        assert!(m.sample(0, &s(8)).is_err());
    }

    #[test]
    fn cg_sample_mean_clt() {
        let spec = cg_from_covariance(vec![1.0, -2.0], vec![vec![1.0, 0.6], vec![0.6, 2.0]]).unwrap();
        let m: ModelSpec = spec.clone().into();
        let n = 1_000_000;
        let x = m.sample(n, &s(9)).unwrap();
        for j in 0..2 {
            let mean = x.column(j).iter().sum::<f64>() / n as f64;
            let sd = spec.covariance[j][j].sqrt();
            assert!((mean - spec.mean[j]).abs() < 4.0 * sd / (n as f64).sqrt());
        }
    }

    #[test]
    fn spec_json_roundtrip() {
        let m: ModelSpec = build_cg(3, &s(10)).unwrap().into();
        let js = serde_json::to_string(&m).unwrap();
        assert!(js.contains("\"cholesky_factor\""));
        let back: ModelSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
    }
}
