use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Constant sparse matrix in compressed-row form.
///
/// Entries are unique per `(row, col)` and sorted by row, then column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, weight)` triplets.
    pub fn from_triplets(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = entries.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::Index(format!(
                    "entry ({r}, {c}) outside {rows}x{cols} sparse matrix"
                )));
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(Error::Index(format!(
                "duplicate sparse entry ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in &sorted {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx: sorted.iter().map(|e| e.1).collect(),
            values: sorted.iter().map(|e| e.2).collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of row `i` as `(col, weight)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|i| self.row(i).map(move |(j, w)| (i, j, w)))
            .collect()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for (i, j, w) in self.triplets() {
            t.data_mut()[i * self.cols + j] = w;
        }
        t
    }

    pub fn transpose(&self) -> SparseMatrix {
        let flipped: Vec<_> = self.triplets().into_iter().map(|(i, j, w)| (j, i, w)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, &flipped)
            .expect("transpose of a valid matrix is valid")
    }

    /// `out = self · x` for a row-major `x` with `width` columns.
    pub(crate) fn mul_dense(&self, x: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * width];
        for i in 0..self.rows {
            let dst = &mut out[i * width..(i + 1) * width];
            for (j, w) in self.row(i) {
                let src = &x[j * width..(j + 1) * width];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
            }
        }
        out
    }

    /// `out += selfᵀ · g`, used by the spmm backward pass.
    pub(crate) fn mul_transpose_acc(&self, g: &[f64], width: usize, out: &mut [f64]) {
        for i in 0..self.rows {
            let gi = &g[i * width..(i + 1) * width];
            for (j, w) in self.row(i) {
                let dst = &mut out[j * width..(j + 1) * width];
                dst.iter_mut().zip(gi).for_each(|(d, s)| *d += w * s);
            }
        }
    }
}
