//! Dataset files, feature standardization and split-half resampling.
//!
//! Two on-disk formats are read and written:
//!
//! * `csv`: a header row of feature names, then one comma-separated row of
//!   decimal values per point.
//! * `raw`: the magic bytes `TSB1`, `n` and `d` as little-endian `u32`, then
//!   `n·d` little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;
use crate::rng::RngStream;

const RAW_MAGIC: &[u8; 4] = b"TSB1";
const NARROW_RATIO: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Raw,
}

impl DataFormat {
    /// Guesses the format from a file extension; anything but `.csv` is raw.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Raw,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "raw" => Ok(DataFormat::Raw),
            _ => Err(Error::InvalidArgument(format!("unknown data format '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub matrix: DataMatrix,
    pub feature_names: Vec<String>,
    pub source_path: String,
    /// 128-bit digest of the shape and values, hex encoded.
    pub content_hash: String,
}

impl Dataset {
    pub fn new(matrix: DataMatrix, feature_names: Vec<String>, source_path: impl Into<String>) -> Result<Self> {
        if feature_names.len() != matrix.cols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.cols(),
                found: feature_names.len(),
            });
        }
        let content_hash = content_hash(&matrix);
        Ok(Self {
            matrix,
            feature_names,
            source_path: source_path.into(),
            content_hash,
        })
    }

    /// Names features `x0, x1, …`.
    pub fn unnamed(matrix: DataMatrix, source_path: impl Into<String>) -> Self {
        let names = (0..matrix.cols()).map(|j| format!("x{j}")).collect();
        Self::new(matrix, names, source_path).expect("one name per column")
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

/// Digest of the matrix shape and little-endian values, independent of the
/// file encoding it was read from.
pub fn content_hash(m: &DataMatrix) -> String {
    let mut h = Sha256::new();
    h.update((m.rows() as u64).to_le_bytes());
    h.update((m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let ds = match format {
        DataFormat::Csv => read_csv(path)?,
        DataFormat::Raw => read_raw(path)?,
    };
    for j in narrow_features(&ds.matrix) {
        warn!(
            "feature {j} ({}) is nearly constant relative to its range; epsilon scans may not converge",
            ds.feature_names[j]
        );
    }
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Csv => write_csv(ds, path.as_ref()),
        DataFormat::Raw => write_raw(&ds.matrix, path.as_ref()),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            row,
            col: 0,
            msg: format!("{other:?}"),
        },
    }
}

fn read_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let names: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_owned)
        .collect();
    let d = names.len();
    if d == 0 || names.iter().all(String::is_empty) {
        return Err(Error::Parse { row: 0, col: 0, msg: "missing header row".into() });
    }
    let mut values = Vec::new();
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        if record.len() != d {
            return Err(Error::Parse {
                row: n,
                col: record.len().min(d),
                msg: format!("expected {d} fields, found {}", record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: n,
                col,
                msg: format!("not a number: '{field}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: n, col });
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Parse { row: 0, col: 0, msg: "no data rows".into() });
    }
    Dataset::new(DataMatrix::new(n, d, values)?, names, path.display().to_string())
}

fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(&ds.feature_names).map_err(csv_error)?;
    // `Display` for f64 prints the shortest string that parses back exactly.
    for row in ds.matrix.iter_rows() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn read_raw(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| Error::Parse {
        row: 0,
        col: 0,
        msg: "truncated raw header".into(),
    })?;
    if &header[..4] != RAW_MAGIC {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: format!("bad magic {:?}, expected \"TSB1\"", String::from_utf8_lossy(&header[..4])),
        });
    }
    let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    // Bytes 12..16 of the header are reserved.
    let expected = n * d * 8;
    if bytes.len() != expected {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: format!("expected {expected} payload bytes for {n}x{d}, found {}", bytes.len()),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let m = DataMatrix::new(n, d, values)?;
    Ok(Dataset::unnamed(m, path.display().to_string()))
}

fn write_raw(m: &DataMatrix, path: &Path) -> Result<()> {
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} exceeds the raw format limit")))
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RAW_MAGIC)?;
    w.write_all(&to_u32(m.rows())?.to_le_bytes())?;
    w.write_all(&to_u32(m.cols())?.to_le_bytes())?;
    w.write_all(&[0u8; 4])?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Per-feature mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleInfo {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ScaleInfo {
    pub fn fit(m: &DataMatrix) -> Result<Self> {
        let n = m.rows() as f64;
        let mut means = Vec::with_capacity(m.cols());
        let mut stds = Vec::with_capacity(m.cols());
        for j in 0..m.cols() {
            let col = m.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !(std > 4.0 * f64::EPSILON * scale) {
                return Err(Error::ConstantFeature(j));
            }
            means.push(mean);
            stds.push(std);
        }
        Ok(Self { means, stds })
    }

    pub fn standardize(&self, m: &DataMatrix) -> DataMatrix {
        m.map_entries(|j, v| (v - self.means[j]) / self.stds[j])
    }

    /// Maps standardized values back to the original feature scale.
    pub fn destandardize(&self, m: &DataMatrix) -> DataMatrix {
        m.map_entries(|j, v| v * self.stds[j] + self.means[j])
    }
}

/// Standardizes every feature to zero mean and unit variance.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, ScaleInfo)> {
    let info = ScaleInfo::fit(&ds.matrix)?;
    let scaled = Dataset::new(info.standardize(&ds.matrix), ds.feature_names.clone(), ds.source_path.clone())?;
    Ok((scaled, info))
}

/// Features whose spread is tiny compared to their range (δ-like features
/// with a few outliers).
pub fn narrow_features(m: &DataMatrix) -> Vec<usize> {
    narrow_features_with(m, NARROW_RATIO)
}

fn narrow_features_with(m: &DataMatrix, ratio: f64) -> Vec<usize> {
    (0..m.cols())
        .filter(|&j| {
            let col = m.column(j);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let range = hi - lo;
            range > 0.0 && std < ratio * range
        })
        .collect()
}

/// Shuffled row indices split into the first `⌊rows/2⌋` and the rest.
pub fn split_half_indices(rows: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(rng);
    let second = order.split_off(rows / 2);
    (order, second)
}

pub fn split_half(m: &DataMatrix, stream: &RngStream) -> Result<(DataMatrix, DataMatrix)> {
    if m.rows() < 2 {
        return Err(Error::TooFewPoints { needed: 2, found: m.rows() });
    }
    let (a, b) = split_half_indices(m.rows(), &mut stream.rng());
    Ok((m.select_rows(&a), m.select_rows(&b)))
}

/// `n` positions drawn from `0..rows`.
pub fn bootstrap_indices(rows: usize, n: usize, with_replacement: bool, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if rows == 0 || (!with_replacement && n > rows) {
        return Err(Error::TooFewPoints { needed: n, found: rows });
    }
    Ok(if with_replacement {
        (0..n).map(|_| rng.random_range(0..rows)).collect()
    } else {
        rand::seq::index::sample(rng, rows, n).into_vec()
    })
}

pub fn bootstrap_draw(half: &DataMatrix, n: usize, stream: &RngStream, with_replacement: bool) -> Result<DataMatrix> {
    let idx = bootstrap_indices(half.rows(), n, with_replacement, &mut stream.rng())?;
    Ok(half.select_rows(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_matrix() -> DataMatrix {
        DataMatrix::from_rows(&[vec![0.1, -2.5], vec![1.0 / 3.0, 1e-300], vec![7.25e12, -0.0]]).unwrap()
    }

    fn sorted_rows(m: &DataMatrix) -> Vec<Vec<u64>> {
        let mut rows: Vec<Vec<u64>> = m.iter_rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let ds = Dataset::new(sample_matrix(), vec!["a".into(), "b".into()], "mem").unwrap();
        save_dataset(&ds, &p, DataFormat::Csv).unwrap();
        let back = load_dataset(&p, DataFormat::Csv).unwrap();
        assert_eq!(back.feature_names, ds.feature_names);
        assert_eq!(back.matrix, ds.matrix);
        assert_eq!(back.content_hash, ds.content_hash);
    }

    #[test]
    fn raw_round_trip_and_hash_matches_csv() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::unnamed(sample_matrix(), "mem");
        let (pr, pc) = (dir.path().join("d.bin"), dir.path().join("d.csv"));
        save_dataset(&ds, &pr, DataFormat::Raw).unwrap();
        save_dataset(&ds, &pc, DataFormat::Csv).unwrap();
        let raw = load_dataset(&pr, DataFormat::Raw).unwrap();
        let csv = load_dataset(&pc, DataFormat::Csv).unwrap();
        let bits = |m: &DataMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&raw.matrix), bits(&ds.matrix));
        assert_eq!(raw.content_hash, csv.content_hash);
        assert_eq!(raw.content_hash.len(), 32);
        let raw_bytes = std::fs::read(&pr).unwrap();
        assert_eq!(&raw_bytes[..4], b"TSB1");
        assert_eq!(raw_bytes.len(), 16 + 6 * 8);
    }

    #[test]
    fn bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(load_dataset(&p, DataFormat::Raw), Err(Error::Parse { .. })));

        let c = dir.path().join("bad.csv");
        std::fs::write(&c, "a,b\n1,2\n3,oops\n").unwrap();
        assert!(matches!(load_dataset(&c, DataFormat::Csv), Err(Error::Parse { row: 1, col: 1, .. })));
        std::fs::write(&c, "a,b\n1,2\nnan,1\n").unwrap();
        assert!(matches!(load_dataset(&c, DataFormat::Csv), Err(Error::NonFiniteValue { row: 1, col: 0 })));
        std::fs::write(&c, "a,b\n1,2\n3\n").unwrap();
        assert!(load_dataset(&c, DataFormat::Csv).is_err());
    }

    #[test]
    fn standardize_properties() {
        let mut rng = RngStream::new(1, "std", 0).rng();
        let v: Vec<f64> = (0..300).map(|i| rng.random_range(-5.0..5.0) * (1 + i % 3) as f64 + 10.0).collect();
        let ds = Dataset::unnamed(DataMatrix::new(100, 3, v).unwrap(), "mem");
        let (scaled, info) = standardize(&ds).unwrap();
        for j in 0..3 {
            let c = scaled.matrix.column(j);
            let mean = c.iter().sum::<f64>() / 100.0;
            let std = (c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
            assert!(mean.abs() < 1e-12 && (std - 1.0).abs() < 1e-12);
        }
        let back = info.destandardize(&scaled.matrix);
        for (a, b) in back.as_slice().iter().zip(ds.matrix.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let (again, _) = standardize(&scaled).unwrap();
        for (a, b) in again.matrix.as_slice().iter().zip(scaled.matrix.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_and_narrow_features() {
        let m = DataMatrix::from_rows(&[vec![1.0, 0.1], vec![2.0, 0.1], vec![3.0, 0.1]]).unwrap();
        assert!(matches!(standardize(&Dataset::unnamed(m, "mem")), Err(Error::ConstantFeature(1))));
        // One outlier among n points gives std ≈ range/√n.
        let mut col = vec![0.0; 40_000];
        col[0] = 1.0;
        let wide: Vec<f64> = (0..40_000).map(f64::from).collect();
        let m = DataMatrix::new(40_000, 2, col.into_iter().zip(wide).flat_map(|(a, b)| [a, b]).collect()).unwrap();
        assert_eq!(narrow_features_with(&m, 1e-2), vec![0]);
        assert!(narrow_features(&m).is_empty());
    }

    #[test]
    fn split_half_sizes_and_multiset() {
        for (n, a, b) in [(4, 2, 2), (5, 2, 3)] {
            let m = DataMatrix::from_column((0..n).map(f64::from).collect()).unwrap();
            let (x, y) = split_half(&m, &RngStream::new(3, "split", n as u64)).unwrap();
            assert_eq!((x.rows(), y.rows()), (a, b));
            let mut all = x.as_slice().to_vec();
            all.extend_from_slice(y.as_slice());
            let joined = DataMatrix::from_column(all).unwrap();
            assert_eq!(sorted_rows(&joined), sorted_rows(&m));
        }
    }

    #[test]
    fn bootstrap_modes() {
        let m = DataMatrix::from_column((0..1000).map(f64::from).collect()).unwrap();
        let s = RngStream::new(4, "boot", 0);
        let perm = bootstrap_draw(&m, 1000, &s, false).unwrap();
        assert_eq!(sorted_rows(&perm), sorted_rows(&m));
        assert!(bootstrap_draw(&m, 1001, &s, false).is_err());
        let big = bootstrap_draw(&m, 10_000, &s, true).unwrap();
        assert_eq!(big.rows(), 10_000);
        // Occupancy: an entry has a duplicate unless none of the other n−1
        // draws hits its row, so the fraction is 1 − (1 − 1/n)^{n−1} ≈ 1 − 1/e.
        let same = bootstrap_draw(&m, 1000, &s, true).unwrap();
        let mut counts = std::collections::HashMap::new();
        for v in same.as_slice() {
            *counts.entry(v.to_bits()).or_insert(0usize) += 1;
        }
        let duplicated: usize = counts.values().filter(|&&c| c > 1).sum();
        let dup_fraction = duplicated as f64 / 1000.0;
        let expect = 1.0 - (-1.0f64).exp();
        assert!((dup_fraction - expect).abs() < 0.02, "{dup_fraction}");
    }
}
