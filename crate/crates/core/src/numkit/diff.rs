//! Central finite differences, used to check analytic gradients and Jacobians.

use super::linalg::Matrix;

pub fn finite_diff_grad<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            xp[j] = x[j] + h;
            let up = f(&xp);
            xp[j] = x[j] - h;
            let down = f(&xp);
            xp[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Jacobian of a vector function; entry `(i, j)` is `d f_i / d x_j`.
pub fn finite_diff_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], h: f64) -> Matrix {
    let mut xp = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let up = f(&xp);
        xp[j] = x[j] - h;
        let down = f(&xp);
        xp[j] = x[j];
        cols.push(up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect::<Vec<_>>());
    }
    let m = cols.first().map_or(0, Vec::len);
    let mut jac = Matrix::zeros(m, x.len());
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            jac[(i, j)] = *v;
        }
    }
    jac
}
