//! Accumulators that energy terms write into.

use crate::sparse::TripletMatrix;

/// How much of an energy term to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Value,
    Gradient,
    Hessian,
}

/// Hessian under construction. Entries among the first `dense_dim` DoFs go
/// to a dense buffer (bone and reduced blocks couple densely); the rest are
/// kept as triplets.
#[derive(Clone, Debug)]
pub struct HessianBuilder {
    n: usize,
    dense_dim: usize,
    dense: Vec<f64>,
    sparse: TripletMatrix,
}

impl HessianBuilder {
    pub fn new(n: usize, dense_dim: usize) -> Self {
        let dense_dim = dense_dim.min(n);
        Self {
            n,
            dense_dim,
            dense: vec![0.0; dense_dim * dense_dim],
            sparse: TripletMatrix::square(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        if row < self.dense_dim && col < self.dense_dim {
            self.dense[col * self.dense_dim + row] += value;
        } else {
            self.sparse.push(row, col, value);
        }
    }

    pub fn add_block<R, C, S>(&mut self, row0: usize, col0: usize, block: &nalgebra::Matrix<f64, R, C, S>)
    where
        R: nalgebra::Dim,
        C: nalgebra::Dim,
        S: nalgebra::RawStorage<f64, R, C>,
    {
        for c in 0..block.ncols() {
            for r in 0..block.nrows() {
                self.add(row0 + r, col0 + c, block[(r, c)]);
            }
        }
    }

    /// Adds `scale * a b^T` over sparse index lists.
    pub fn add_outer(&mut self, a: &[(usize, f64)], b: &[(usize, f64)], scale: f64) {
        for &(i, x) in a {
            for &(j, y) in b {
                self.add(i, j, scale * x * y);
            }
        }
    }

    pub fn append(&mut self, m: &TripletMatrix) {
        for &(r, c, v) in &m.entries {
            self.add(r, c, v);
        }
    }

    /// Adds another builder of the same shape.
    pub fn merge(&mut self, other: HessianBuilder) {
        debug_assert_eq!((self.n, self.dense_dim), (other.n, other.dense_dim));
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            *a += b;
        }
        self.sparse.entries.extend(other.sparse.entries);
    }

    pub fn finish(self) -> TripletMatrix {
        let mut out = self.sparse;
        let d = self.dense_dim;
        let mut dense_entries = Vec::new();
        for c in 0..d {
            for r in 0..d {
                let v = self.dense[c * d + r];
                if v != 0.0 {
                    dense_entries.push((r, c, v));
                }
            }
        }
        dense_entries.append(&mut out.entries);
        out.entries = dense_entries;
        out
    }
}

/// Value, gradient and Hessian accumulated over several terms.
#[derive(Clone, Debug)]
pub struct Accumulator {
    pub level: Level,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: HessianBuilder,
}

impl Accumulator {
    pub fn new(n: usize, dense_dim: usize, level: Level) -> Self {
        Self {
            level,
            value: 0.0,
            gradient: if level >= Level::Gradient { vec![0.0; n] } else { Vec::new() },
            hessian: HessianBuilder::new(if level >= Level::Hessian { n } else { 0 }, dense_dim),
        }
    }

    pub fn wants_gradient(&self) -> bool {
        self.level >= Level::Gradient
    }

    pub fn wants_hessian(&self) -> bool {
        self.level >= Level::Hessian
    }

    /// Adds a scalar energy whose gradient is `scale * col` over the given
    /// sparse DoF columns, with Gauss-Newton Hessian `scale2 * col col^T`.
    pub fn add_gauss_newton(&mut self, cols: &[(usize, f64)], grad_scale: f64, hess_scale: f64) {
        if self.wants_gradient() {
            for &(i, x) in cols {
                self.gradient[i] += grad_scale * x;
            }
        }
        if self.wants_hessian() {
            self.hessian.add_outer(cols, cols, hess_scale);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_sparse_parts_merge() {
        let mut h = HessianBuilder::new(4, 2);
        h.add(0, 1, 1.0);
        h.add(0, 1, 2.0);
        h.add(3, 0, 5.0);
        h.add(2, 2, 1.5);
        let d = h.finish().to_dense();
        assert_eq!(d[(0, 1)], 3.0);
        assert_eq!(d[(3, 0)], 5.0);
        assert_eq!(d[(2, 2)], 1.5);
        assert_eq!(d.iter().filter(|x| **x != 0.0).count(), 3);
    }
}
