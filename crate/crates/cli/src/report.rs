//! `report`: plot-ready series for every cached null distribution.

use std::fs;
use std::path::{Path, PathBuf};

use tstbench::nulls::NullDistribution;
use tstbench::statistics::{kolmogorov_cdf, kolmogorov_pdf};

use crate::experiment::{write_atomic, CliError, NullIndexEntry, NULL_INDEX};

pub const DEFAULT_BINS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub mass: f64,
}

impl HistogramBin {
    pub fn center(&self) -> f64 {
        0.5 * (self.left + self.right)
    }

    pub fn density(&self) -> f64 {
        self.mass / (self.right - self.left)
    }
}

/// Equal-width histogram over `[min, max]`, normalized to unit mass.
pub fn histogram(sorted: &[f64], bins: usize) -> Vec<HistogramBin> {
    assert!(!sorted.is_empty() && bins > 0);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in sorted {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let total = sorted.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| HistogramBin {
            left: lo + k as f64 * width,
            right: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
            mass: c as f64 / total,
        })
        .collect()
}

/// `(value, F̂(value))` at every distinct value, counting ties.
pub fn ecdf_points(sorted: &[f64]) -> Vec<(f64, f64)> {
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = f,
            _ => out.push((v, f)),
        }
    }
    out
}

fn write_series(null: &NullDistribution, dir: &Path, bins: usize) -> Result<[PathBuf; 2], CliError> {
    let ks = null.metric.is_ks_family();
    let stem = format!("{}_n{}", null.metric, null.n);

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["bin_left", "bin_right", "center", "mass", "density"];
    if ks {
        head.push("kolmogorov_pdf");
    }
    w.write_record(&head).expect("in-memory write");
    for b in histogram(&null.values, bins) {
        let mut rec = vec![b.left, b.right, b.center(), b.mass, b.density()];
        if ks {
            rec.push(kolmogorov_pdf(b.center()));
        }
        w.write_record(rec.iter().map(f64::to_string)).expect("in-memory write");
    }
    let pdf = dir.join(format!("{stem}_pdf.csv"));
    write_atomic(&pdf, &w.into_inner().expect("in-memory flush"))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["value", "ecdf"];
    if ks {
        head.push("kolmogorov_cdf");
    }
    w.write_record(&head).expect("in-memory write");
    for (v, f) in ecdf_points(&null.values) {
        let mut rec = vec![v, f];
        if ks {
            rec.push(kolmogorov_cdf(v));
        }
        w.write_record(rec.iter().map(f64::to_string)).expect("in-memory write");
    }
    let cdf = dir.join(format!("{stem}_cdf.csv"));
    write_atomic(&cdf, &w.into_inner().expect("in-memory flush"))?;
    Ok([pdf, cdf])
}

/// Writes `<dir>/report/<metric>_n<n>_{pdf,cdf}.csv` for every null listed in
/// `<dir>/nulls.json`.
pub fn cmd_report(dir: &Path, bins: usize) -> Result<Vec<PathBuf>, CliError> {
    let index_path = dir.join(NULL_INDEX);
    let text = fs::read_to_string(&index_path).map_err(|_| {
        CliError::MissingCache(format!("{} not found; run `null` or `scan` first", index_path.display()))
    })?;
    let entries: Vec<NullIndexEntry> = serde_json::from_str(&text)
        .map_err(|e| CliError::MissingCache(format!("{}: {e}", index_path.display())))?;
    if entries.is_empty() {
        return Err(CliError::MissingCache(format!("{} lists no null distributions", index_path.display())));
    }
    let out = dir.join("report");
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    for e in entries {
        let null = NullDistribution::load(&e.file)
            .map_err(|err| CliError::MissingCache(format!("{} (n={}): {}: {err}", e.metric, e.n, e.file.display())))?;
        written.extend(write_series(&null, &out, bins.max(1))?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn histogram_edges_and_mass() {
        let h = histogram(&[0.0, 1.0, 1.0, 2.0], 2);
        assert_eq!(h.len(), 2);
        assert_eq!((h[0].left, h[0].right, h[1].right), (0.0, 1.0, 2.0));
        assert_eq!(h[0].mass, 0.25);
        assert_eq!(h[1].mass, 0.75);
    }

    #[test]
    fn constant_sample_gets_one_wide_bin() {
        let h = histogram(&[3.0; 5], 4);
        assert_eq!(h.iter().map(|b| b.mass).sum::<f64>(), 1.0);
        assert!(h.iter().all(|b| b.right > b.left));
    }

    #[test]
    fn ecdf_collapses_ties() {
        assert_eq!(ecdf_points(&[1.0, 1.0, 2.0]), vec![(1.0, 2.0 / 3.0), (2.0, 1.0)]);
    }

    proptest! {
        #[test]
        fn mass_sums_to_one(mut v in prop::collection::vec(-1e3f64..1e3, 1..300), bins in 1usize..80) {
            v.sort_by(f64::total_cmp);
            let total: f64 = histogram(&v, bins).iter().map(|b| b.mass).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn ecdf_monotone_to_one(mut v in prop::collection::vec(-5f64..5.0, 1..200)) {
            v.sort_by(f64::total_cmp);
            let pts = ecdf_points(&v);
            prop_assert!(pts.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(pts.last().unwrap().1, 1.0);
            prop_assert!(pts[0].1 > 0.0);
        }
    }
}
