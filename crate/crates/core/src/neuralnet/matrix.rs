use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "matrix data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    context: "matrix row",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self · otherᵀ` : (B×in)·(out×in)ᵀ = B×out
    pub(crate) fn mul_transposed(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        for b in 0..self.rows {
            let x = self.row(b);
            let dst = out.row_mut(b);
            for (o, d) in dst.iter_mut().enumerate() {
                let w = other.row(o);
                *d = x.iter().zip(w).map(|(a, b)| a * b).sum();
            }
        }
        out
    }

    /// `self · other` : (B×out)·(out×in) = B×in
    pub(crate) fn mul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for b in 0..self.rows {
            let g = self.row(b);
            let dst = &mut out.data[b * other.cols..(b + 1) * other.cols];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                for (d, w) in dst.iter_mut().zip(other.row(o)) {
                    *d += go * w;
                }
            }
        }
        out
    }

    /// `selfᵀ · other` : (B×out)ᵀ·(B×in) = out×in
    pub(crate) fn transposed_mul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        for b in 0..self.rows {
            let g = self.row(b);
            let x = other.row(b);
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let dst = &mut out.data[o * other.cols..(o + 1) * other.cols];
                for (d, xi) in dst.iter_mut().zip(x) {
                    *d += go * xi;
                }
            }
        }
        out
    }

    pub(crate) fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for b in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(b)) {
                *s += v;
            }
        }
        sums
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree_with_hand_values() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let y = x.mul_transposed(&w);
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0, 3.0, 4.0, 7.0]);
        let back = y.mul(&w);
        assert_eq!(back.as_slice(), &[4.0, 5.0, 10.0, 11.0]);
        let gw = y.transposed_mul(&x);
        assert_eq!((gw.rows(), gw.cols()), (3, 2));
        assert_eq!(gw.row(2), &[3.0 * 1.0 + 7.0 * 3.0, 3.0 * 2.0 + 7.0 * 4.0]);
        assert_eq!(x.column_sums(), vec![4.0, 6.0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(Matrix::from_rows(&rows).is_err());
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
