//! Dense row-major matrices and Cholesky-based solvers.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a Cholesky pivot is treated as zero.
pub const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidParameter(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidParameter("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Matrix::from_row_major(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "dimension mismatch in mul_vec");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "dimension mismatch in mul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// Adds `w * v vᵀ` to a square matrix.
    pub fn add_outer(&mut self, v: &[f64], w: f64) {
        debug_assert_eq!(self.rows, self.cols);
        let n = self.cols;
        for i in 0..n {
            let vi = w * v[i];
            if vi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * n..(i + 1) * n];
            for (r, vj) in row.iter_mut().zip(v) {
                *r += vi * vj;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = self.max_abs().max(1.0);
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol * scale))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        let (l, failed) = factor(a, false)?;
        match failed.first() {
            Some(&pivot) => Err(Error::NotPositiveDefinite { pivot }),
            None => Ok(Cholesky { l }),
        }
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut z = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l.row(i)[..i], &z[..i]);
            z[i] = (z[i] - s) / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * z[k];
            }
            z[i] = s / self.l[(i, i)];
        }
        z
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.l.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Cholesky factorization. With `skip_failed`, pivots that fall below the
/// relative threshold are recorded and their column is dropped (set to the
/// unit vector) so the remaining pivots can still be checked.
fn factor(a: &Matrix, skip_failed: bool) -> Result<(Matrix, Vec<usize>)> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::InvalidParameter(format!(
            "Cholesky needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut l = Matrix::zeros(n, n);
    let mut failed = Vec::new();
    for j in 0..n {
        let diag = a[(j, j)];
        let s = diag - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if !(s > PIVOT_TOL * diag.abs().max(f64::MIN_POSITIVE)) || !s.is_finite() {
            failed.push(j);
            if !skip_failed {
                return Ok((l, failed));
            }
            l[(j, j)] = 1.0;
            continue;
        }
        let d = s.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            if failed.contains(&i) {
                continue;
            }
            let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / d;
        }
    }
    Ok((l, failed))
}

/// Columns whose Cholesky pivot collapses, i.e. that are linear combinations
/// of earlier columns of the Gram matrix.
pub fn collinear_columns(gram: &Matrix) -> Result<Vec<usize>> {
    Ok(factor(gram, true)?.1)
}

/// Solves `A x = b` for symmetric positive definite `A` via Cholesky, with one
/// step of iterative refinement.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::InvalidParameter(format!(
            "right-hand side has length {}, matrix has {} rows",
            b.len(),
            a.rows()
        )));
    }
    if !a.is_symmetric(1e-10) {
        return Err(Error::InvalidParameter("matrix is not symmetric".into()));
    }
    let chol = Cholesky::new(a)?;
    let mut x = chol.solve(b);
    let ax = a.mul_vec(&x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let dx = chol.solve(&r);
    x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
    Ok(x)
}

/// General square solve by Gaussian elimination with partial pivoting. Used
/// for the non-symmetric Jacobians of estimating equations.
pub fn solve_general(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if n != a.cols() || b.len() != n {
        return Err(Error::InvalidParameter("solve_general: dimension mismatch".into()));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, m[(i, k)].abs()))
            .fold((k, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if pmax <= 1e-14 * scale {
            return Err(Error::Numeric(format!("singular matrix at column {k}")));
        }
        if p != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = tmp;
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let f = m[(i, k)] / m[(k, k)];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                let v = m[(k, j)];
                m[(i, j)] -= f * v;
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Ok(x)
}

pub fn inverse_general(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = solve_general(a, &e)?;
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve() {
        let x = solve_spd(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_solve() {
        let a = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]).unwrap();
        let x = solve_spd(&a, &[8.0, 27.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn random_spd_residual() {
        // A = B Bᵀ + I with a fixed pseudo-random B; checked by multiplying back.
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let b = Matrix::from_row_major(5, 5, (0..25).map(|_| next()).collect()).unwrap();
        let mut a = b.mul(&b.transpose());
        for i in 0..5 {
            a[(i, i)] += 1.0;
        }
        let rhs: Vec<f64> = (0..5).map(|_| next() * 10.0).collect();
        let x = solve_spd(&a, &rhs).unwrap();
        let ax = a.mul_vec(&x);
        let resid = ax.iter().zip(&rhs).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(resid <= 1e-8 * norm_inf(&rhs), "residual {resid}");
    }

    #[test]
    fn non_spd_names_pivot() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match solve_spd(&a, &[1.0, 1.0]) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected pivot error, got {other:?}"),
        }
    }

    #[test]
    fn collinear_detection() {
        // third column = first + second
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 2.0],
            vec![1.0, 2.0, 3.0],
            vec![1.0, 5.0, 6.0],
        ])
        .unwrap();
        let g = x.transpose().mul(&x);
        assert_eq!(collinear_columns(&g).unwrap(), vec![2]);
    }

    #[test]
    fn general_solve_matches() {
        let a = Matrix::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let x = solve_general(&a, &[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }
}
