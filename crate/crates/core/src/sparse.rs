//! Compressed sparse row storage for constant propagation matrices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr<F> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<F>,
}

impl<F: Scalar> Csr<F> {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate entries
    /// are summed; columns within a row end up sorted.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, F)]) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, F)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            if r >= rows {
                return Err(Error::IndexOutOfRange { index: r, len: rows });
            }
            if c >= cols {
                return Err(Error::IndexOutOfRange { index: c, len: cols });
            }
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for mut row in per_row {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    let end = values.len() - 1;
                    values[end] = values[end] + v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![F::one(); n],
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

    /// Iterates `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, F)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => F::zero(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.cols, self.rows, &triplets).expect("transpose indices in range")
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v))
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<F> {
        let mut out = vec![F::zero(); self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[r * self.cols + c] = v;
            }
        }
        out
    }

    /// `self · dense` where `dense` is a row-major `cols × width` matrix.
    pub fn mul_dense(&self, dense: &[F], width: usize) -> Result<Vec<F>> {
        if dense.len() != self.cols * width {
            return Err(Error::shape(
                "spmm",
                &[self.rows, self.cols],
                &[dense.len() / width.max(1), width],
            ));
        }
        let mut out = vec![F::zero(); self.rows * width];
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let src = &dense[c * width..(c + 1) * width];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o = *o + v * s;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_duplicates_and_sort() {
        let m = Csr::<f64>::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn mul_dense_matches_dense_product() {
        let m = Csr::<f64>::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 3.0), (1, 1, 1.0)]).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(m.mul_dense(&x, 2).unwrap(), vec![6.0, 8.0, 6.0, 10.0]);
        assert!(m.mul_dense(&x[..3], 1).is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let m = Csr::<f64>::from_triplets(2, 3, &[(0, 1, 2.0), (1, 2, 3.0)]).unwrap();
        assert_eq!(m.transpose().transpose(), m);
        assert!(!m.is_symmetric());
        assert!(Csr::<f64>::identity(3).is_symmetric());
    }
}
