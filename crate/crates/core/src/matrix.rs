use crate::error::{Error, Result};

/// Dense row-major feature matrix handed to the classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::LengthMismatch {
                    expected: n_cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(DesignMatrix {
            n_rows: rows.len(),
            n_cols,
            data,
        })
    }

    pub fn from_flat(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::LengthMismatch {
                expected: n_rows * n_cols,
                actual: data.len(),
            });
        }
        Ok(DesignMatrix {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    /// Copy with column `j` replaced by `values`.
    pub fn with_column(&self, j: usize, values: &[f64]) -> DesignMatrix {
        let mut out = self.clone();
        for (i, v) in values.iter().enumerate() {
            out.data[i * self.n_cols + j] = *v;
        }
        out
    }

    pub fn select_rows(&self, indices: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        DesignMatrix {
            n_rows: indices.len(),
            n_cols: self.n_cols,
            data,
        }
    }
}
