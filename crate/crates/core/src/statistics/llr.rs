use rayon::prelude::*;

use crate::deformations::Deformation;
use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::models::ModelSpec;

use super::pairwise_sum;

const SINGULAR_NUDGE: f64 = 1e-300;

/// Magnitude at which the statistic saturates. Far from the identity the
/// power deformations push `log q_ε` below the f64 range.
pub const LLR_SATURATION: f64 = 1e300;

/// `log q_ε(y)`, nudging zero coordinates off the singular set of the power
/// deformations.
fn deformed_log_density(model: &ModelSpec, def: &Deformation, y: &[f64]) -> Result<f64> {
    match def.deformed_log_density(model, y) {
        Err(Error::SingularPoint { .. }) => {
            let mut nudged = y.to_vec();
            let mut step = SINGULAR_NUDGE;
            // A very small y can map back to an exact zero for Pow−, so widen
            // the nudge until the inverse image leaves the singular set.
            for _ in 0..8 {
                for v in nudged.iter_mut().filter(|v| v.abs() < step) {
                    *v = step;
                }
                match def.deformed_log_density(model, &nudged) {
                    Err(Error::SingularPoint { .. }) => step *= 1e20,
                    other => return other,
                }
            }
            def.deformed_log_density(model, &nudged)
        }
        other => other,
    }
}

/// Log-likelihood-ratio statistic `−2 Σ_y [log p(y) − log q_ε(y)]`.
///
/// Only the alternative sample enters. Positive values favour the deformed
/// model.
pub fn llr(model: &ModelSpec, def: &Deformation, y: &DataMatrix) -> Result<f64> {
    if y.cols() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: y.cols() });
    }
    if !def.kind.is_bijective() {
        return Err(Error::NotInvertible(def.kind.name()));
    }
    if def.epsilon == 0.0 {
        return Ok(0.0);
    }
    let terms: Vec<f64> = (0..y.rows())
        .into_par_iter()
        .map(|i| {
            let row = y.row(i);
            Ok(deformed_log_density(model, def, row)? - model.log_density(row))
        })
        .collect::<Result<_>>()?;
    let t = 2.0 * pairwise_sum(&terms);
    if t.is_nan() {
        return Err(Error::Domain("log-likelihood ratio is undefined".into()));
    }
    Ok(t.clamp(-LLR_SATURATION, LLR_SATURATION))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deformations::{make_deformation, DeformKind};
    use crate::models::cg_from_covariance;
    use crate::rng::RngStream;

    fn standard_normal_1d() -> ModelSpec {
        ModelSpec::Cg(cg_from_covariance(vec![0.0], vec![vec![1.0]]).unwrap())
    }

    #[test]
    fn zero_epsilon_is_exactly_zero() {
        let model = standard_normal_1d();
        let def = make_deformation(DeformKind::PowPlus, 0.0, &model.mean(), &RngStream::new(1, "d", 0)).unwrap();
        let y = model.sample(50, &RngStream::new(1, "y", 0)).unwrap();
        assert_eq!(llr(&model, &def, &y).unwrap(), 0.0);
    }

    #[test]
    fn non_bijective_rejected() {
        let model = standard_normal_1d();
        let def = make_deformation(DeformKind::NoiseNormal, 0.1, &model.mean(), &RngStream::new(1, "d", 0)).unwrap();
        let y = model.sample(5, &RngStream::new(1, "y", 0)).unwrap();
        assert!(matches!(llr(&model, &def, &y), Err(Error::NotInvertible(_))));
    }

    #[test]
    fn singular_points_are_nudged() {
        let model = standard_normal_1d();
        for kind in [DeformKind::PowPlus, DeformKind::PowMinus] {
            let def = make_deformation(kind, 0.5, &model.mean(), &RngStream::new(1, "d", 0)).unwrap();
            let y = DataMatrix::from_column(vec![0.0, 1.0]).unwrap();
            assert!(llr(&model, &def, &y).unwrap().is_finite());
        }
    }

    #[test]
    fn saturates_instead_of_overflowing() {
        let model = standard_normal_1d();
        let def = make_deformation(DeformKind::PowMinus, 1.0 - 1e-6, &model.mean(), &RngStream::new(1, "d", 0)).unwrap();
        // Inverse images of |y| > 1 overflow to infinity.
        let y = DataMatrix::from_column(vec![3.0, -2.0, 0.5]).unwrap();
        assert_eq!(llr(&model, &def, &y).unwrap(), -LLR_SATURATION);
    }

    /// For a unit-variance Gaussian shifted by `c`, `2·KL = c²` in either direction.
    #[test]
    fn shift_matches_gaussian_kl() {
        let model = standard_normal_1d();
        let def = make_deformation(DeformKind::Mu, 0.5, &model.mean(), &RngStream::new(3, "d", 0)).unwrap();
        let c = def.delta_mu()[0];
        let m = 100;
        let reps = 2000;
        let mut h1 = Vec::with_capacity(reps);
        let mut h0 = Vec::with_capacity(reps);
        for r in 0..reps as u64 {
            let base = model.sample(m, &RngStream::new(4, "rep", r)).unwrap();
            h1.push(llr(&model, &def, &def.apply(&base, r).unwrap()).unwrap());
            h0.push(llr(&model, &def, &base).unwrap());
        }
        let stats = |v: &[f64]| {
            let k = v.len() as f64;
            let mean = v.iter().sum::<f64>() / k;
            let var = v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (mean, (var / k).sqrt())
        };
        let expect = m as f64 * c * c;
        let (mean1, se1) = stats(&h1);
        assert!((mean1 - expect).abs() < 3.0 * se1, "{mean1} vs {expect} ± {se1}");
        let (mean0, se0) = stats(&h0);
        assert!((mean0 + expect).abs() < 3.0 * se0, "{mean0} vs {} ± {se0}", -expect);
        assert!(mean0 <= 0.0 && mean1 >= 0.0);
    }
}
