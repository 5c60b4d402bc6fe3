use crate::ecdf::{sort_values, SortedSample};
use crate::error::Result;
use crate::matrix::DataMatrix;
use crate::rng::RngStream;

use super::{sliced_mean, MetricConfig};

/// Scaled two-sample KS statistic `√(nm/(n+m)) · sup_u |F_n(u) − G_m(u)|`.
///
/// Walks both sorted samples once; equal values are consumed together before
/// the difference is taken, so ties across samples are handled exactly.
pub fn ks_1d(xs: &SortedSample, ys: &SortedSample) -> f64 {
    let (a, b) = (xs.values(), ys.values());
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    // sup |i/n − j/m| = sup |i·m − j·n| / (n·m), kept in integers.
    let mut sup: u128 = 0;
    while i < n && j < m {
        let u = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] <= u {
            i += 1;
        }
        while j < m && b[j] <= u {
            j += 1;
        }
        let diff = (i as i128 * m as i128 - j as i128 * n as i128).unsigned_abs();
        sup = sup.max(diff);
    }
    // Once either sample is exhausted the difference only shrinks towards 0.
    let d = sup as f64 / (n as f64 * m as f64);
    let (nf, mf) = (n as f64, m as f64);
    (nf * mf / (nf + mf)).sqrt() * d
}

/// Mean of the marginal KS statistics over the `d` features.
pub fn mean_ks(x: &DataMatrix, y: &DataMatrix) -> Result<f64> {
    x.check_same_dim(y)?;
    let d = x.cols();
    let total: f64 = (0..d)
        .map(|j| {
            let mut a = x.column(j);
            let mut b = y.column(j);
            sort_values(&mut a);
            sort_values(&mut b);
            ks_1d(&SortedSample::from_sorted(a), &SortedSample::from_sorted(b))
        })
        .sum();
    Ok(total / d as f64)
}

/// Mean KS statistic over `cfg.slices` fresh random projections.
pub fn sliced_ks(
    x: &DataMatrix,
    y: &DataMatrix,
    cfg: &MetricConfig,
    stream: &RngStream,
) -> Result<f64> {
    sliced_mean(x, y, cfg.slices, stream, |a, b| Ok(ks_1d(a, b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sorted(v: &[f64]) -> SortedSample {
        SortedSample::new(v.to_vec()).unwrap()
    }

    /// Evaluates `|F − G|` on every pooled sample point.
    fn grid_oracle(xs: &SortedSample, ys: &SortedSample) -> f64 {
        let (n, m) = (xs.len() as f64, ys.len() as f64);
        let sup = xs
            .values()
            .iter()
            .chain(ys.values())
            .map(|&u| (xs.ecdf(u) - ys.ecdf(u)).abs())
            .fold(0.0, f64::max);
        (n * m / (n + m)).sqrt() * sup
    }

    #[test]
    fn disjoint_supports() {
        assert_eq!(ks_1d(&sorted(&[1.0, 2.0]), &sorted(&[3.0, 4.0])), 1.0);
        assert_eq!(ks_1d(&sorted(&[3.0, 4.0]), &sorted(&[1.0, 2.0])), 1.0);
    }

    #[test]
    fn identical_and_tied() {
        let a = sorted(&[1.0, 1.0, 2.0, 5.0]);
        assert_eq!(ks_1d(&a, &a), 0.0);
        // F jumps to 1/2 at u=1, G to 1: sup = 1/2, scale √(4·2/6).
        let b = sorted(&[1.0, 1.0]);
        let expect = (8.0f64 / 6.0).sqrt() * 0.5;
        assert!((ks_1d(&a, &b) - expect).abs() < 1e-15);
    }

    #[test]
    fn random_pair_matches_grid_exactly() {
        use rand::Rng;
        let mut rng = RngStream::new(5, "ks", 0).rng();
        let a: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.random::<f64>() + 0.05).collect();
        let (a, b) = (sorted(&a), sorted(&b));
        // Same supremum point; only the float rounding of i/n − j/m differs.
        let (k, o) = (ks_1d(&a, &b), grid_oracle(&a, &b));
        assert!((k - o).abs() <= 4.0 * f64::EPSILON * o, "{k} vs {o}");
    }

    #[test]
    fn mean_ks_one_dim_and_additivity() {
        let x = DataMatrix::from_rows(&[
            vec![0.1, 5.0],
            vec![0.4, 6.0],
            vec![0.9, 7.0],
            vec![1.3, 8.0],
        ])
        .unwrap();
        let y_same = x.clone();
        assert_eq!(mean_ks(&x, &y_same).unwrap(), 0.0);
        // Shift the second marginal only.
        let y = DataMatrix::from_rows(&[
            vec![0.1, 5.5],
            vec![0.4, 6.5],
            vec![0.9, 7.5],
            vec![1.3, 8.5],
        ])
        .unwrap();
        let k2 = ks_1d(&sorted(&x.column(1)), &sorted(&y.column(1)));
        assert_eq!(mean_ks(&x, &y).unwrap(), k2 / 2.0);

        let x1 = DataMatrix::from_column(x.column(1)).unwrap();
        let y1 = DataMatrix::from_column(y.column(1)).unwrap();
        assert_eq!(mean_ks(&x1, &y1).unwrap(), k2);
    }

    #[test]
    fn sliced_one_dim_is_reflection_invariant() {
        let x = DataMatrix::from_column(vec![0.3, 0.3, -1.0, 2.5, 0.7]).unwrap();
        let y = DataMatrix::from_column(vec![1.3, 0.3, -0.4, 4.0]).unwrap();
        let direct = ks_1d(&sorted(x.as_slice()), &sorted(y.as_slice()));
        for k in [1, 2, 7, 31] {
            let cfg = MetricConfig { slices: k, ..MetricConfig::default() };
            let v = sliced_ks(&x, &y, &cfg, &RngStream::new(k as u64, "sks", 0)).unwrap();
            assert!((v - direct).abs() <= 1e-15 * direct, "K={k}: {v} vs {direct}");
        }
    }

    proptest! {
        #[test]
        fn matches_grid_oracle_and_symmetric(
            a in prop::collection::vec(-5i32..5, 1..50),
            b in prop::collection::vec(-5i32..5, 1..50),
        ) {
            // Small integer ranges force plenty of ties.
            let a = sorted(&a.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
            let b = sorted(&b.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
            let k = ks_1d(&a, &b);
            let o = grid_oracle(&a, &b);
            prop_assert!((k - o).abs() <= 1e-12 * o.max(1e-300));
            prop_assert_eq!(k, ks_1d(&b, &a));
            prop_assert!(k >= 0.0);
        }

        #[test]
        fn mean_ks_invariant_under_increasing_maps(
            vals in prop::collection::vec(-3.0f64..3.0, 6..40),
        ) {
            let half = vals.len() / 2 / 2 * 2;
            let x = DataMatrix::new(half / 2, 2, vals[..half].to_vec()).unwrap();
            let y = DataMatrix::new(half / 2, 2, vals[half..half * 2].to_vec()).unwrap();
            let base = mean_ks(&x, &y).unwrap();
            let f = |c: usize, v: f64| if c == 0 { v.exp() } else { v * v * v + 2.0 * v };
            let xt = x.map_entries(f);
            let yt = y.map_entries(f);
            prop_assert_eq!(base, mean_ks(&xt, &yt).unwrap());
        }
    }
}
