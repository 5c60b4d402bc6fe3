use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::rng::RngStream;

use super::MetricConfig;

const EIGEN_MAX_ITER: usize = 10_000;

/// Sample mean and unbiased (`n − 1`) covariance of a data matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSummary {
    /// Builds a summary from known moments, symmetrizing the covariance.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: covariance.nrows() });
        }
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn gaussian_summary(x: &DataMatrix) -> Result<GaussianSummary> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, found: n });
    }
    let mut centered = DMatrix::from_row_slice(n, d, x.as_slice());
    let mean = DVector::from_iterator(d, centered.column_iter().map(|c| c.sum() / n as f64));
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    GaussianSummary::new(mean, cov)
}

fn symmetric_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::FactorizationFailure("symmetric eigendecomposition did not converge".into()))
}

/// `tr √(A^{1/2} B A^{1/2})`, which equals `tr √(AB)` for PSD inputs.
/// Negative eigenvalues from round-off are floored at zero.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let d = a.nrows();
    if a.ncols() != d || b.nrows() != d || b.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: b.nrows() });
    }
    let ea = symmetric_eigen((a + a.transpose()) * 0.5)?;
    let roots = ea.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sqrt_a = &ea.eigenvectors * DMatrix::from_diagonal(&roots) * ea.eigenvectors.transpose();
    let inner = &sqrt_a * b * &sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let ei = symmetric_eigen(inner)?;
    Ok(ei.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum())
}

/// Fréchet distance between two Gaussian summaries.
pub fn fgd_from_summaries(s1: &GaussianSummary, s2: &GaussianSummary) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch { expected: s1.dim(), found: s2.dim() });
    }
    let dmu = (&s1.mean - &s2.mean).norm_squared();
    let cross = trace_sqrt_product(&s1.covariance, &s2.covariance)?;
    Ok(dmu + s1.covariance.trace() + s2.covariance.trace() - 2.0 * cross)
}

/// Fréchet distance between the Gaussian summaries of two samples.
pub fn fgd_finite(x: &DataMatrix, y: &DataMatrix) -> Result<f64> {
    x.check_same_dim(y)?;
    fgd_from_summaries(&gaussian_summary(x)?, &gaussian_summary(y)?)
}

fn subsample(x: &DataMatrix, size: usize, rng: &mut impl rand::Rng) -> DataMatrix {
    let idx = sample_indices(rng, x.rows(), size).into_vec();
    x.select_rows(&idx)
}

/// FGD extrapolated to infinite sample size.
///
/// For every fit fraction `f` the finite FGD is averaged over
/// `cfg.fgd_draws_per_size` subsamples of `⌊n/f⌋` and `⌊m/f⌋` rows (drawn
/// without replacement). The averages are regressed on the mean inverse
/// subsample size and the intercept is returned. The result may be negative.
pub fn fgd_inf(x: &DataMatrix, y: &DataMatrix, cfg: &MetricConfig, stream: &RngStream) -> Result<f64> {
    x.check_same_dim(y)?;
    let d = x.cols();
    let (n, m) = (x.rows(), y.rows());
    let size = |total: usize, f: f64| (total as f64 / f).floor() as usize;
    let smallest = size(n.min(m), cfg.max_fraction());
    if smallest < d + 2 {
        return Err(Error::TooFewPoints { needed: d + 2, found: smallest });
    }

    let fractions = &cfg.fgd_fit_fractions;
    let draws = cfg.fgd_draws_per_size;
    let values: Vec<f64> = (0..fractions.len() * draws)
        .into_par_iter()
        .map(|task| {
            let f = fractions[task / draws];
            let (sx, sy) = (size(n, f), size(m, f));
            let mut rng = stream.child("fgd-draw", task as u64).rng();
            // A full-size draw without replacement is a permutation, which
            // leaves the summaries unchanged.
            let xs = if sx == n { None } else { Some(subsample(x, sx, &mut rng)) };
            let ys = if sy == m { None } else { Some(subsample(y, sy, &mut rng)) };
            fgd_finite(xs.as_ref().unwrap_or(x), ys.as_ref().unwrap_or(y))
        })
        .collect::<Result<_>>()?;

    let points: Vec<(f64, f64)> = fractions
        .iter()
        .zip(values.chunks(draws))
        .map(|(&f, chunk)| {
            let inv = 0.5 * (1.0 / size(n, f) as f64 + 1.0 / size(m, f) as f64);
            (inv, chunk.iter().sum::<f64>() / draws as f64)
        })
        .collect();
    Ok(ols_intercept(&points))
}

/// Least-squares intercept of `y` on `x`; the mean of `y` if all `x` coincide.
fn ols_intercept(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let xbar = points.iter().map(|p| p.0).sum::<f64>() / k;
    let ybar = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return ybar;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    ybar - sxy / sxx * xbar
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_cg, ModelSpec};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn summary_1d(mu: f64, var: f64) -> GaussianSummary {
        GaussianSummary::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, var)).unwrap()
    }

    fn random_spd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(d, d) * 0.1
    }

    /// `Σ √λ` over the eigenvalues of the nonsymmetric product `AB`.
    fn product_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a * b).complex_eigenvalues().iter().map(|l| l.sqrt().re).sum()
    }

    #[test]
    fn summary_hand_values() {
        let s = gaussian_summary(&DataMatrix::from_column(vec![0.0, 2.0]).unwrap()).unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.covariance[(0, 0)], 2.0);
        let same = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let s = gaussian_summary(&same).unwrap();
        assert!(s.covariance.iter().all(|&v| v == 0.0));
        assert!(gaussian_summary(&DataMatrix::from_column(vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn summary_of_standard_normals() {
        let mut rng = RngStream::new(8, "fgd-normal", 0).rng();
        let (n, d) = (1_000_000, 3);
        let v: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let s = gaussian_summary(&DataMatrix::new(n, d, v).unwrap()).unwrap();
        let err = (&s.covariance - DMatrix::<f64>::identity(d, d)).amax();
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn trace_sqrt_identities() {
        let i4 = DMatrix::<f64>::identity(4, 4);
        assert!((trace_sqrt_product(&i4, &i4).unwrap() - 4.0).abs() < 1e-12);
        let mut rng = RngStream::new(2, "spd", 0).rng();
        let a = random_spd(&mut rng, 4);
        assert!((trace_sqrt_product(&a, &a).unwrap() - a.trace()).abs() < 1e-10 * a.trace());
    }

    #[test]
    fn trace_sqrt_matches_product_oracle() {
        let mut rng = RngStream::new(3, "spd", 0).rng();
        for _ in 0..20 {
            let (a, b) = (random_spd(&mut rng, 4), random_spd(&mut rng, 4));
            let t = trace_sqrt_product(&a, &b).unwrap();
            let o = product_oracle(&a, &b);
            assert!((t - o).abs() <= 1e-8 * o, "{t} vs {o}");
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let f = |a: &GaussianSummary, b: &GaussianSummary| fgd_from_summaries(a, b).unwrap();
        assert!((f(&summary_1d(0.0, 1.0), &summary_1d(1.0, 1.0)) - 1.0).abs() < 1e-12);
        assert!((f(&summary_1d(0.0, 1.0), &summary_1d(0.0, 4.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finite_is_zero_on_identical_and_symmetric() {
        let model = ModelSpec::Cg(build_cg(3, &RngStream::new(1, "cg", 0)).unwrap());
        let x = model.sample(200, &RngStream::new(1, "x", 0)).unwrap();
        let y = model.sample(150, &RngStream::new(1, "y", 0)).unwrap();
        assert!(fgd_finite(&x, &x).unwrap().abs() < 1e-9);
        let (a, b) = (fgd_finite(&x, &y).unwrap(), fgd_finite(&y, &x).unwrap());
        assert!(a >= 0.0 && (a - b).abs() < 1e-10 * a.max(1.0));
    }

    #[test]
    fn full_size_fractions_reduce_to_finite() {
        let model = ModelSpec::Cg(build_cg(2, &RngStream::new(5, "cg", 0)).unwrap());
        let x = model.sample(64, &RngStream::new(5, "x", 0)).unwrap();
        let y = model.sample(64, &RngStream::new(5, "y", 0)).unwrap();
        let cfg = MetricConfig { fgd_fit_fractions: vec![1.0], ..MetricConfig::default() };
        let inf = fgd_inf(&x, &y, &cfg, &RngStream::new(0, "fgd", 0)).unwrap();
        let fin = fgd_finite(&x, &y).unwrap();
        assert!((inf - fin).abs() <= 1e-14 * fin.max(1.0));
    }

    #[test]
    fn intercept_recovers_line() {
        let pts: Vec<(f64, f64)> = [0.1, 0.2, 0.5].iter().map(|&x| (x, 3.0 - 2.0 * x)).collect();
        assert!((ols_intercept(&pts) - 3.0).abs() < 1e-12);
        assert_eq!(ols_intercept(&[(0.5, 2.0), (0.5, 4.0)]), 3.0);
    }

    #[test]
    fn inf_deterministic_and_checks_size() {
        let model = ModelSpec::Cg(build_cg(5, &RngStream::new(6, "cg", 0)).unwrap());
        let x = model.sample(100, &RngStream::new(6, "x", 0)).unwrap();
        let y = model.sample(100, &RngStream::new(6, "y", 0)).unwrap();
        let cfg = MetricConfig::default();
        let s = RngStream::new(7, "fgd", 0);
        assert_eq!(fgd_inf(&x, &y, &cfg, &s).unwrap(), fgd_inf(&x, &y, &cfg, &s).unwrap());
        let small = x.select_rows(&(0..13).collect::<Vec<_>>());
        assert!(matches!(
            fgd_inf(&small, &small, &cfg, &s),
            Err(Error::TooFewPoints { needed: 7, found: 6 })
        ));
    }
}
