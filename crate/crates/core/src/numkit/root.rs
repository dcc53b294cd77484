//! Newton's method for square systems of estimating equations.

use super::glm::{GRAD_TOL, MAX_HALVINGS, MAX_ITER};
use super::linalg::{norm_inf, solve_general, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RootResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// ∞-norm of the system at each accepted iterate.
    pub trace: Vec<f64>,
}

/// Solves `f(x) = 0` given `f` and its Jacobian. Steps are halved until the
/// residual norm decreases.
pub fn newton_root<F>(model: &str, f: F, x0: Vec<f64>) -> Result<RootResult>
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, Matrix)>,
{
    let mut x = x0;
    let (mut val, mut jac) = f(&x)?;
    let mut trace = vec![norm_inf(&val)];
    for iter in 0..MAX_ITER {
        let norm = *trace.last().unwrap();
        if norm <= GRAD_TOL {
            return Ok(RootResult { x, iterations: iter, trace });
        }
        let step = solve_general(&jac, &val).map_err(|e| Error::Nuisance {
            nuisance: model.to_string(),
            msg: format!("singular Jacobian: {e}"),
        })?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(xi, d)| xi - t * d).collect();
            if let Ok((v, j)) = f(&cand) {
                let nv = norm_inf(&v);
                if nv.is_finite() && nv < norm {
                    accepted = Some((cand, v, j, nv));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, v, j, nv)) = accepted else {
            break;
        };
        x = cand;
        val = v;
        jac = j;
        trace.push(nv);
    }
    if *trace.last().unwrap() <= GRAD_TOL {
        let iterations = trace.len() - 1;
        return Ok(RootResult { x, iterations, trace });
    }
    Err(Error::NoConvergence {
        model: model.to_string(),
        iterations: trace.len() - 1,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_cubic() {
        let f = |x: &[f64]| {
            let v = vec![x[0].powi(3) - 8.0];
            let j = Matrix::from_row_major(1, 1, vec![3.0 * x[0] * x[0]])?;
            Ok((v, j))
        };
        let r = newton_root("cubic", f, vec![5.0]).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn linear_system_one_step() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let f = |x: &[f64]| {
            let mut v = a.mul_vec(x);
            v[0] -= 3.0;
            v[1] -= 5.0;
            Ok((v, a.clone()))
        };
        let r = newton_root("linear", f, vec![0.0, 0.0]).unwrap();
        assert!(r.iterations <= 2);
        assert!((r.x[0] - 0.8).abs() < 1e-12 && (r.x[1] - 1.4).abs() < 1e-12);
    }
}
