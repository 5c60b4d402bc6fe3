use crate::error::{Error, Result};

/// Sorts in place by IEEE total order.
pub fn sort_values(values: &mut [f64]) {
    values.sort_unstable_by(f64::total_cmp);
}

/// Non-decreasing sequence of reals, the input of all one-dimensional statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SortedSample {
    values: Vec<f64>,
}

impl SortedSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::TooFewPoints {
                needed: 1,
                found: 0,
            });
        }
        sort_values(&mut values);
        Ok(Self { values })
    }

    /// Wraps values the caller has already sorted.
    pub(crate) fn from_sorted(values: Vec<f64>) -> Self {
        debug_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Right-continuous eCDF `(#values ≤ u) / n`.
    pub fn ecdf(&self, u: f64) -> f64 {
        self.values.partition_point(|&v| v <= u) as f64 / self.values.len() as f64
    }
}

/// Free-function form of [`SortedSample::ecdf`].
pub fn ecdf_eval(s: &SortedSample, u: f64) -> f64 {
    s.ecdf(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scan_oracle(values: &[f64], u: f64) -> f64 {
        values.iter().filter(|&&v| v <= u).count() as f64 / values.len() as f64
    }

    #[test]
    fn step_values() {
        let s = SortedSample::new(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(ecdf_eval(&s, 2.0), 2.0 / 3.0);
        assert_eq!(ecdf_eval(&s, 0.0), 0.0);
        assert_eq!(ecdf_eval(&s, 3.0), 1.0);
        assert_eq!(ecdf_eval(&s, 1e9), 1.0);
    }

    #[test]
    fn ties_consume_all_equal_values() {
        let s = SortedSample::new(vec![1.0, 1.0, 2.0]).unwrap();
        assert_eq!(ecdf_eval(&s, 1.0), scan_oracle(&[1.0, 1.0, 2.0], 1.0));
        assert_eq!(ecdf_eval(&s, 1.0), 2.0 / 3.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(SortedSample::new(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn matches_linear_scan_and_is_monotone(
            mut xs in prop::collection::vec(-5i32..5, 1..40),
            us in prop::collection::vec(-6i32..6, 2..10),
        ) {
            let vals: Vec<f64> = xs.drain(..).map(f64::from).collect();
            let s = SortedSample::new(vals.clone()).unwrap();
            let mut us: Vec<f64> = us.into_iter().map(|u| f64::from(u) * 0.7).collect();
            sort_values(&mut us);
            let mut prev = 0.0;
            for u in us {
                let f = s.ecdf(u);
                prop_assert_eq!(f, scan_oracle(&vals, u));
                prop_assert!(f >= prev);
                prev = f;
            }
        }
    }
}
