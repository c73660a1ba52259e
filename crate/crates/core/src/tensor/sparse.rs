use super::{Result, Tensor, TensorError};

/// Compressed sparse row matrix with constant (non-learnable) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1
            || row_offsets.first() != Some(&0)
            || row_offsets.last() != Some(&col_indices.len())
            || col_indices.len() != weights.len()
        {
            return Err(TensorError::InvalidArgument(format!(
                "malformed CSR: {} offsets for {rows} rows, {} indices, {} weights",
                row_offsets.len(),
                col_indices.len(),
                weights.len()
            )));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(TensorError::InvalidArgument(
                "CSR row offsets must be nondecreasing".into(),
            ));
        }
        if let Some(k) = col_indices.iter().position(|&c| c >= cols) {
            return Err(TensorError::IndexOutOfBounds {
                op: "sparse",
                index: col_indices[k],
                len: cols,
            });
        }
        if let Some(k) = weights.iter().position(|w| !w.is_finite()) {
            return Err(TensorError::Domain {
                op: "sparse",
                index: k,
                value: weights[k],
            });
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            weights,
        })
    }

    /// Builds a matrix from `(row, col, weight)` triplets. Duplicate
    /// coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut weights: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, w) in &sorted {
            if r >= rows {
                return Err(TensorError::IndexOutOfBounds {
                    op: "sparse",
                    index: r,
                    len: rows,
                });
            }
            if last == Some((r, c)) {
                *weights.last_mut().expect("duplicate follows an entry") += w;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            weights.push(w);
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::new(rows, cols, row_offsets, col_indices, weights)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            weights: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(col, weight)` pairs stored in row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).filter(|&(j, _)| j == c).map(|(_, w)| w).sum()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, w) in self.row(r) {
                out.values_mut()[r * self.cols + c] += w;
            }
        }
        out
    }

    /// `self · x` for a dense row-major `x` with `d` columns.
    pub(crate) fn mul_dense(&self, x: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * d];
        for r in 0..self.rows {
            let out_row = &mut out[r * d..(r + 1) * d];
            for (c, w) in self.row(r) {
                for (o, v) in out_row.iter_mut().zip(&x[c * d..(c + 1) * d]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// `selfᵀ · g` for a dense row-major `g` with `d` columns.
    pub(crate) fn transpose_mul_dense(&self, g: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * d];
        for r in 0..self.rows {
            let g_row = &g[r * d..(r + 1) * d];
            for (c, w) in self.row(r) {
                for (o, v) in out[c * d..(c + 1) * d].iter_mut().zip(g_row) {
                    *o += w * v;
                }
            }
        }
        out
    }
}
