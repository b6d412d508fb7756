use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = F::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::from_vec", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("Matrix::from_vec", "non-finite entry"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// `out = self * x + bias`.
    pub fn affine_into(&self, x: &[F], bias: &[F], out: &mut Vec<F>) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::shape("Matrix::affine_into input", self.cols, x.len()));
        }
        if bias.len() != self.rows {
            return Err(Error::shape("Matrix::affine_into bias", self.rows, bias.len()));
        }
        out.clear();
        out.extend_from_slice(bias);
        if self.cols == 0 {
            return Ok(());
        }
        for (acc, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            for (&w, &xi) in row.iter().zip(x) {
                *acc += w * xi;
            }
        }
        Ok(())
    }

    pub fn matvec(&self, x: &[F]) -> Result<Vec<F>> {
        let zero = vec![F::zero(); self.rows];
        let mut out = Vec::with_capacity(self.rows);
        self.affine_into(x, &zero, &mut out)?;
        Ok(out)
    }

    /// `out += self^T * y`.
    pub fn transpose_matvec_acc(&self, y: &[F], out: &mut [F]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &yi) in self.data.chunks_exact(self.cols.max(1)).zip(y) {
            if yi == F::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * yi;
            }
        }
    }

    /// `self += y x^T`.
    pub fn add_outer(&mut self, y: &[F], x: &[F]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        let cols = self.cols;
        for (row, &yi) in self.data.chunks_exact_mut(cols.max(1)).zip(y) {
            if yi == F::zero() {
                continue;
            }
            for (w, &xj) in row.iter_mut().zip(x) {
                *w += yi * xj;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length_and_finiteness() {
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::<f64>::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        let m = Matrix::<f64>::from_vec(2, 3, (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(m.get(1, 2), 5.0);
        assert_eq!(m.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn affine_and_transpose() {
        let m = Matrix::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]])
            .unwrap();
        let mut out = Vec::new();
        m.affine_into(&[1.0, -1.0], &[0.5, 0.0, 1.0], &mut out).unwrap();
        assert_eq!(out, vec![-0.5, -1.0, 0.0]);
        let mut t = vec![0.0; 2];
        m.transpose_matvec_acc(&[1.0, 0.0, 1.0], &mut t);
        assert_eq!(t, vec![6.0, 8.0]);
        assert!(m.affine_into(&[1.0], &[0.0; 3], &mut out).is_err());
    }

    #[test]
    fn identity_matvec() {
        let m = Matrix::<f32>::identity(3);
        assert_eq!(m.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
