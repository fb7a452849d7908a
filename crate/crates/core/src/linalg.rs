//! Small dense linear-algebra kernels used by the bilinear operators.
//!
//! Matrices are stored row-major in a flat `Vec<f64>`. The hot kernels
//! (`mul_vec_into`, `mul_transpose_vec_into`) are written as plain slice loops
//! so that they vectorize and never allocate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is identically zero")]
    ZeroMatrix,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error(
        "power iteration did not converge after {iterations} iterations \
         (estimate {estimate}, relative gap {gap})"
    )]
    NoConvergence {
        iterations: usize,
        estimate: f64,
        gap: f64,
        last_iterate: Vec<f64>,
    },
    #[error("linear system is singular")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::Dimension {
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// `out = self * x`
    #[inline]
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// `out = selfᵀ * x`
    #[inline]
    pub fn mul_transpose_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&xr, row) in x.iter().zip(self.data.chunks_exact(self.cols)) {
            axpy(xr, row, out);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.mul_transpose_vec_into(x, &mut out);
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable without fast-math
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm_sq(x: &[f64]) -> f64 {
    dot(x, x)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Default relative tolerance for [`spectral_norm`].
pub const SPECTRAL_TOL: f64 = 1e-6;
/// Iteration cap for [`spectral_norm`].
pub const SPECTRAL_MAX_ITER: usize = 100_000;

/// Largest singular value of `m`, by power iteration on `mᵀm` from the
/// normalized all-ones vector.
///
/// Stops when the eigen-residual `‖mᵀm q − θ q‖ / θ` drops below `tol`;
/// for the symmetric `mᵀm` this bounds the relative error of `θ = σ²` and
/// therefore of `σ` (to first order by half of it).
pub fn spectral_norm(m: &Matrix, tol: f64) -> Result<f64, LinalgError> {
    spectral_norm_capped(m, tol, SPECTRAL_MAX_ITER)
}

pub fn spectral_norm_capped(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64, LinalgError> {
    if !(tol > 0.0) {
        return Err(LinalgError::BadTolerance(tol));
    }
    if m.is_zero() {
        return Err(LinalgError::ZeroMatrix);
    }
    let n = m.cols();
    let mut q = vec![1.0 / (n as f64).sqrt(); n];
    let mut mq = vec![0.0; m.rows()];
    let mut bq = vec![0.0; n];
    let mut theta = 0.0;
    let mut gap = f64::INFINITY;
    for _ in 0..max_iter {
        m.mul_vec_into(&q, &mut mq);
        m.mul_transpose_vec_into(&mq, &mut bq);
        theta = dot(&q, &bq);
        if theta <= 0.0 {
            // start vector orthogonal to the row space; perturb deterministically
            for (i, qi) in q.iter_mut().enumerate() {
                *qi += 1.0 / (i + 2) as f64;
            }
            let nq = norm_sq(&q).sqrt();
            q.iter_mut().for_each(|x| *x /= nq);
            continue;
        }
        let resid: f64 = bq
            .iter()
            .zip(&q)
            .map(|(b, qi)| (b - theta * qi).powi(2))
            .sum::<f64>()
            .sqrt();
        gap = resid / theta;
        let nb = norm_sq(&bq).sqrt();
        for (qi, bi) in q.iter_mut().zip(&bq) {
            *qi = bi / nb;
        }
        if gap <= tol {
            // Rayleigh quotient at the refreshed iterate
            m.mul_vec_into(&q, &mut mq);
            return Ok(norm_sq(&mq).sqrt());
        }
    }
    Err(LinalgError::NoConvergence {
        iterations: max_iter,
        estimate: theta.sqrt(),
        gap,
        last_iterate: q,
    })
}

/// Solves the square system `m x = rhs` by LU with partial pivoting.
pub fn lu_solve(m: &Matrix, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = m.rows();
    if m.cols() != n {
        return Err(LinalgError::Dimension {
            expected: n,
            got: m.cols(),
        });
    }
    if rhs.len() != n {
        return Err(LinalgError::Dimension {
            expected: n,
            got: rhs.len(),
        });
    }
    let a = nalgebra::DMatrix::from_row_slice(n, n, m.as_slice());
    let lu = a.lu();
    // partial pivoting keeps |L| ≤ 1, so a tiny pivot relative to the
    // largest entry signals numerical singularity
    let scale = m.as_slice().iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let min_pivot = lu
        .u()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |acc, x| acc.min(x.abs()));
    if scale == 0.0 || min_pivot <= scale * f64::EPSILON * n as f64 {
        return Err(LinalgError::Singular);
    }
    let b = nalgebra::DVector::from_column_slice(rhs);
    lu.solve(&b)
        .map(|x| x.as_slice().to_vec())
        .ok_or(LinalgError::Singular)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_product_matches_explicit_transpose() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.mul_vec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.mul_transpose_vec(&[1.0, -1.0]), vec![-3.0, -3.0, -3.0]);
    }

    #[test]
    fn spectral_norm_diag() {
        let s = spectral_norm(&Matrix::from_diag(&[3.0, 4.0]), 1e-10).unwrap();
        assert!((s - 4.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_identity() {
        let s = spectral_norm(&Matrix::identity(7), 1e-12).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_rejects_zero_and_bad_tol() {
        assert_eq!(
            spectral_norm(&Matrix::zeros(3, 3), 1e-6),
            Err(LinalgError::ZeroMatrix)
        );
        assert!(matches!(
            spectral_norm(&Matrix::identity(2), 0.0),
            Err(LinalgError::BadTolerance(_))
        ));
    }

    #[test]
    fn spectral_norm_reports_non_convergence() {
        // two equal-magnitude singular values with rotation keep the residual
        // from vanishing only if the cap is tiny
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        match spectral_norm_capped(&m, 1e-15, 1) {
            Err(LinalgError::NoConvergence {
                iterations,
                last_iterate,
                ..
            }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last_iterate.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(lu_solve(&m, &[1.0, 1.0]), Err(LinalgError::Singular));
    }

    #[test]
    fn lu_small_system() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 1.0]]).unwrap();
        let x = lu_solve(&m, &[-1.0, 0.0]).unwrap();
        assert!((x[0] + 0.5).abs() < 1e-15 && (x[1] + 0.5).abs() < 1e-15);
    }
}
