//! Coordinate-format matrices and the sparse Cholesky used by the Newton
//! solver. Duplicate triplets are additive.

use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Side};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripletMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl TripletMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Adds a dense block with its top-left corner at `(row0, col0)`.
    pub fn push_block<R, C, S>(&mut self, row0: usize, col0: usize, block: &nalgebra::Matrix<f64, R, C, S>)
    where
        R: nalgebra::Dim,
        C: nalgebra::Dim,
        S: nalgebra::RawStorage<f64, R, C>,
    {
        for c in 0..block.ncols() {
            for r in 0..block.nrows() {
                self.push(row0 + r, col0 + c, block[(r, c)]);
            }
        }
    }

    /// Appends all entries of `other`, shifted by `offset` along both axes.
    pub fn append_shifted(&mut self, other: &TripletMatrix, offset: usize) {
        self.entries
            .extend(other.entries.iter().map(|&(r, c, v)| (r + offset, c + offset, v)));
    }

    pub fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            e.2 *= s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.entries.iter().map(|&(r, c, v)| x[r] * v * y[c]).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for &(r, c, v) in &self.entries {
            if r == c {
                d[r] += v;
            }
        }
        d
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn transpose(&self) -> TripletMatrix {
        TripletMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            entries: self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect(),
        }
    }

    /// Entries merged by (row, col), sorted column-major.
    pub fn compressed(&self) -> Vec<(usize, usize, f64)> {
        let mut e = self.entries.clone();
        e.sort_by_key(|&(r, c, _)| (c, r));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(e.len());
        for (r, c, v) in e {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        out
    }

    /// Parallel-array form: rows, cols, values.
    pub fn to_arrays(&self) -> (Vec<u64>, Vec<u64>, Vec<f64>) {
        let mut rows = Vec::with_capacity(self.entries.len());
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            rows.push(r as u64);
            cols.push(c as u64);
            vals.push(v);
        }
        (rows, cols, vals)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let trips: Vec<Triplet<usize, usize, f64>> = self
            .entries
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .map_err(|e| Error::Singular(format!("cannot assemble sparse matrix: {e:?}")))
    }
}

/// Triplets as three parallel arrays: the exchange format for Hessians.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Triplets {
    pub rows: Vec<u64>,
    pub cols: Vec<u64>,
    pub values: Vec<f64>,
}

impl Triplets {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks that the arrays agree in length and every index is below `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        crate::error::check_len("triplet cols", self.rows.len(), self.cols.len())?;
        crate::error::check_len("triplet values", self.rows.len(), self.values.len())?;
        for &i in self.rows.iter().chain(&self.cols) {
            if i as usize >= n {
                return Err(Error::IndexOutOfRange { index: i as usize, len: n });
            }
        }
        Ok(())
    }

    pub fn to_matrix(&self, n: usize) -> Result<TripletMatrix> {
        self.validate(n)?;
        Ok(TripletMatrix {
            nrows: n,
            ncols: n,
            entries: (0..self.len())
                .map(|k| (self.rows[k] as usize, self.cols[k] as usize, self.values[k]))
                .collect(),
        })
    }
}

impl From<&TripletMatrix> for Triplets {
    fn from(m: &TripletMatrix) -> Self {
        let (rows, cols, values) = m.to_arrays();
        Self { rows, cols, values }
    }
}

/// Sparse LL^T factorization of a symmetric matrix given as full (both
/// triangles) triplets.
pub struct SparseCholesky {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl SparseCholesky {
    /// Fails with [`Error::Singular`] when the matrix is not positive definite.
    pub fn factor(m: &TripletMatrix) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::DimensionMismatch {
                what: "cholesky matrix columns",
                expected: m.nrows,
                actual: m.ncols,
            });
        }
        let a = m.to_faer()?;
        let llt = a
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Singular(format!("not positive definite: {e:?}")))?;
        Ok(Self { llt, n: m.nrows })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        use faer::prelude::Solve;
        let rhs = Col::<f64>::from_fn(self.n, |i| b[i]);
        let x = self.llt.solve(&rhs);
        (0..self.n).map(|i| x[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_additive() {
        let mut m = TripletMatrix::square(2);
        m.push(0, 0, 1.0);
        m.push(0, 0, 2.0);
        m.push(1, 1, 4.0);
        let chol = SparseCholesky::factor(&m).unwrap();
        let x = chol.solve(&[3.0, 8.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        assert_eq!(m.compressed().len(), 2);
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut m = TripletMatrix::square(2);
        m.push(0, 0, 1.0);
        m.push(1, 1, -1.0);
        assert!(matches!(SparseCholesky::factor(&m), Err(Error::Singular(_))));
    }

    #[test]
    fn empty_column_is_rejected() {
        let mut m = TripletMatrix::square(2);
        m.push(0, 0, 1.0);
        assert!(SparseCholesky::factor(&m).is_err());
    }
}
