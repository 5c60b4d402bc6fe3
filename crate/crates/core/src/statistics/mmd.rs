use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

use super::pairwise_sum;

/// Quartic polynomial kernel `(xᵀy/d + 1)⁴`.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    Ok(kernel(x, y, 1.0 / x.len() as f64))
}

#[inline]
fn kernel(x: &[f64], y: &[f64], inv_d: f64) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let t = dot * inv_d + 1.0;
    let t2 = t * t;
    t2 * t2
}

/// `Σ_{i<j} k(a_i, a_j)`, row sums reduced in a fixed order.
fn upper_sum(a: &DataMatrix, inv_d: f64) -> f64 {
    let n = a.rows();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            buf.clear();
            let xi = a.row(i);
            buf.extend((i + 1..n).map(|j| kernel(xi, a.row(j), inv_d)));
            pairwise_sum(buf)
        })
        .collect();
    pairwise_sum(&rows)
}

fn cross_sum(a: &DataMatrix, b: &DataMatrix, inv_d: f64) -> f64 {
    let rows: Vec<f64> = (0..a.rows())
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            buf.clear();
            let xi = a.row(i);
            buf.extend(b.iter_rows().map(|yj| kernel(xi, yj, inv_d)));
            pairwise_sum(buf)
        })
        .collect();
    pairwise_sum(&rows)
}

/// Unbiased squared MMD with the quartic kernel. The diagonal terms are left
/// out of the within-sample means, so the estimate can be negative.
pub fn mmd_unbiased(x: &DataMatrix, y: &DataMatrix) -> Result<f64> {
    x.check_same_dim(y)?;
    for s in [x, y] {
        if s.rows() < 2 {
            return Err(Error::TooFewPoints { needed: 2, found: s.rows() });
        }
    }
    let inv_d = 1.0 / x.cols() as f64;
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    let kxx = 2.0 * upper_sum(x, inv_d) / (n * (n - 1.0));
    let kyy = 2.0 * upper_sum(y, inv_d) / (m * (m - 1.0));
    let kxy = cross_sum(x, y, inv_d) / (n * m);
    Ok(kxx + kyy - 2.0 * kxy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;
    use rand::Rng;

    fn naive(x: &DataMatrix, y: &DataMatrix) -> f64 {
        let k = |a: &[f64], b: &[f64]| poly_kernel(a, b).unwrap();
        let (n, m) = (x.rows(), y.rows());
        let mut sxx = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sxx += k(x.row(i), x.row(j));
                }
            }
        }
        let mut syy = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    syy += k(y.row(i), y.row(j));
                }
            }
        }
        let mut sxy = 0.0;
        for i in 0..n {
            for j in 0..m {
                sxy += k(x.row(i), y.row(j));
            }
        }
        let (nf, mf) = (n as f64, m as f64);
        sxx / (nf * (nf - 1.0)) + syy / (mf * (mf - 1.0)) - 2.0 * sxy / (nf * mf)
    }

    fn random_matrix(rng: &mut impl Rng, n: usize, d: usize) -> DataMatrix {
        DataMatrix::new(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn kernel_hand_values() {
        assert_eq!(poly_kernel(&[1.0], &[1.0]).unwrap(), 16.0);
        assert_eq!(poly_kernel(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(poly_kernel(&[1.0, 1.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(poly_kernel(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_point_hand_expansion() {
        let x = DataMatrix::from_column(vec![0.0, 1.0]).unwrap();
        assert_eq!(mmd_unbiased(&x, &x).unwrap(), -7.5);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = RngStream::new(4, "mmd", 0).rng();
        let x = random_matrix(&mut rng, 30, 3);
        let y = random_matrix(&mut rng, 30, 3);
        let (a, b) = (mmd_unbiased(&x, &y).unwrap(), naive(&x, &y));
        assert!((a - b).abs() <= 1e-10 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn too_few_points() {
        let x = DataMatrix::from_column(vec![0.0]).unwrap();
        let y = DataMatrix::from_column(vec![0.0, 1.0]).unwrap();
        assert!(matches!(mmd_unbiased(&x, &y), Err(Error::TooFewPoints { .. })));
    }

    proptest! {
        #[test]
        fn symmetric_and_permutation_invariant(seed in any::<u64>(), n in 2usize..20, m in 2usize..20, d in 1usize..4) {
            let mut rng = RngStream::new(seed, "mmd-prop", 0).rng();
            let x = random_matrix(&mut rng, n, d);
            let y = random_matrix(&mut rng, m, d);
            let a = mmd_unbiased(&x, &y).unwrap();
            let b = mmd_unbiased(&y, &x).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            let rev: Vec<usize> = (0..n).rev().collect();
            let c = mmd_unbiased(&x.select_rows(&rev), &y).unwrap();
            prop_assert!((a - c).abs() <= 1e-10 * a.abs().max(1.0));
            let o = naive(&x, &y);
            prop_assert!((a - o).abs() <= 1e-10 * o.abs().max(1.0));
        }
    }
}
