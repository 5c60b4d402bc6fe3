use crate::error::{Error, Result};

/// Row-major `rows × cols` matrix of finite reals; one row per sample point.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(n, d, values)
    }

    /// Single-feature matrix.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(n, 1, values)
    }

    /// Skips the finiteness scan; callers guarantee shape.
    pub(crate) fn from_parts(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[j]).collect()
    }

    /// Projection `θᵀx` of every row.
    pub fn project(&self, direction: &[f64]) -> Vec<f64> {
        debug_assert_eq!(direction.len(), self.cols);
        self.iter_rows()
            .map(|r| r.iter().zip(direction).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// New matrix holding the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> DataMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DataMatrix::from_parts(indices.len(), self.cols, values)
    }

    pub fn check_same_dim(&self, other: &DataMatrix) -> Result<()> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.cols,
            });
        }
        Ok(())
    }

    /// Applies `f(column, value)` to every entry, producing a new matrix.
    pub(crate) fn map_entries(&self, mut f: impl FnMut(usize, f64) -> f64) -> DataMatrix {
        let cols = self.cols;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k % cols, v))
            .collect();
        DataMatrix::from_parts(self.rows, cols, values)
    }
}
