use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

pub const ORACLE_MAX_DIM: usize = 5000;

/// Row-major dense matrix, used as a verification oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Solves `A x = b` by LU factorisation with partial pivoting.
pub fn dense_solve_oracle(matrix: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = matrix.rows;
    if matrix.cols != n || rhs.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} system with rhs of length {}",
            matrix.rows,
            matrix.cols,
            rhs.len()
        )));
    }
    if n > ORACLE_MAX_DIM {
        return Err(Error::DimensionMismatch(format!(
            "dense oracle limited to {ORACLE_MAX_DIM} unknowns"
        )));
    }
    let mut a = matrix.data.clone();
    let mut x = rhs.to_vec();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|r| (r, a[r * n + k].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty pivot column");
        if pivot <= scale * f64::EPSILON * n as f64 || pivot == 0.0 {
            return Err(Error::SingularMatrix);
        }
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
            x.swap(k, p);
        }
        let akk = a[k * n + k];
        for r in k + 1..n {
            let l = a[r * n + k] / akk;
            if l == 0.0 {
                continue;
            }
            a[r * n + k] = l;
            for c in k + 1..n {
                a[r * n + c] -= l * a[k * n + c];
            }
            x[r] -= l * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for c in k + 1..n {
            s -= a[k * n + c] * x[c];
        }
        x[k] = s / a[k * n + k];
    }
    Ok(x)
}
