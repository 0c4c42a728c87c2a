use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Compressed sparse row matrix with column indices sorted within each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a square matrix from per-row `(col, value)` lists.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.set(i, j, v);
            }
        }
        out
    }

    /// `self · x`
    pub fn matmul(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(Error::Dimension {
                op: "sparse matmul",
                left: (self.n, self.n),
                right: x.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.n, x.cols());
        for i in 0..self.n {
            let out_row = out.row_mut(i);
            for (j, a) in self.row(i) {
                for (o, &b) in out_row.iter_mut().zip(x.row(j)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Copy with diagonal entries removed.
    pub fn without_diagonal(&self) -> Self {
        Self::from_rows(
            (0..self.n)
                .map(|i| self.row(i).filter(|&(j, _)| j != i).collect())
                .collect(),
        )
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}`, stored sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(SparseMatrix);

impl NormalizedAdjacency {
    /// `neighbors[i]` lists the neighbors of `i`, without `i` itself.
    pub fn from_neighbors(neighbors: &[Vec<usize>]) -> Self {
        let inv_sqrt: Vec<f64> = neighbors
            .iter()
            .map(|nb| 1.0 / ((nb.len() + 1) as f64).sqrt())
            .collect();
        let rows = neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let mut row: Vec<(usize, f64)> = nb
                    .iter()
                    // product taken in (min, max) order so (i, j) and (j, i) are bit-equal
                    .map(|&j| (j, inv_sqrt[i.min(j)] * inv_sqrt[i.max(j)]))
                    .collect();
                row.push((i, inv_sqrt[i] * inv_sqrt[i]));
                row
            })
            .collect();
        Self(SparseMatrix::from_rows(rows))
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> SparseMatrix {
        self.0
    }
}

impl std::ops::Deref for NormalizedAdjacency {
    type Target = SparseMatrix;

    fn deref(&self) -> &SparseMatrix {
        &self.0
    }
}
