//! Least squares and Newton/IRLS fitters for the identity, logit, softmax and
//! log links.
//!
//! Every iterative fitter minimises a *mean* objective (negative
//! log-likelihood or quasi-likelihood divided by the number of rows), so the
//! convergence tolerance on the gradient does not scale with sample size.

use serde::{Deserialize, Serialize};

use super::linalg::{collinear_columns, dot, norm_inf, Cholesky, Matrix};
use crate::error::{Error, Result};

pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
pub const MAX_HALVINGS: usize = 30;
pub const SEPARATION_NORM: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective value after each accepted iteration (first entry is the start).
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLinkFamily {
    /// Gamma quasi-likelihood: variance proportional to the squared mean.
    Gamma,
    /// Poisson-type quasi-likelihood: variance proportional to the mean.
    Quasi,
}

/// Weighted least squares through the normal equations.
pub fn ols_fit(x: &Matrix, y: &[f64], weights: Option<&[f64]>) -> Result<FitResult> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::InvalidParameter(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != n || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "weights must be finite, nonnegative and one per row".into(),
            ));
        }
    }
    let wt = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..n).map(wt).sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter("all weights are zero".into()));
    }

    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let w = wt(i);
        if w == 0.0 {
            continue;
        }
        let row = x.row(i);
        gram.add_outer(row, w);
        for (r, xv) in rhs.iter_mut().zip(row) {
            *r += w * xv * y[i];
        }
    }
    let chol = match Cholesky::new(&gram) {
        Ok(c) => c,
        Err(Error::NotPositiveDefinite { .. }) => {
            return Err(Error::RankDeficient {
                columns: collinear_columns(&gram)?,
            })
        }
        Err(e) => return Err(e),
    };
    let mut beta = chol.solve(&rhs);
    let mut grad = vec![0.0; p];
    // two rounds of refinement on the normal equations
    for _ in 0..2 {
        normal_residual(x, y, &wt, &beta, &mut grad);
        let step = chol.solve(&grad);
        beta.iter_mut().zip(&step).for_each(|(b, d)| *b += d);
    }
    normal_residual(x, y, &wt, &beta, &mut grad);
    let gradient_norm = norm_inf(&grad) / total;
    Ok(FitResult {
        coefficients: beta,
        converged: true,
        iterations: 1,
        gradient_norm,
        objective_trace: Vec::new(),
    })
}

fn normal_residual(x: &Matrix, y: &[f64], wt: &dyn Fn(usize) -> f64, beta: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..x.rows() {
        let w = wt(i);
        if w == 0.0 {
            continue;
        }
        let row = x.row(i);
        let r = w * (y[i] - dot(row, beta));
        for (o, xv) in out.iter_mut().zip(row) {
            *o += r * xv;
        }
    }
}

/// Objective, gradient and (positive semi-definite) Hessian at a point.
struct Eval {
    objective: f64,
    gradient: Vec<f64>,
    hessian: Matrix,
}

/// Damped Newton with step halving. The objective is non-increasing across
/// accepted iterations.
fn newton<F, O>(model: &str, beta0: Vec<f64>, eval: F, objective: O, check_norm: bool) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Eval,
    O: Fn(&[f64]) -> f64,
{
    let mut beta = beta0;
    let mut cur = eval(&beta);
    let mut trace = vec![cur.objective];
    let mut grad_trace = Vec::new();
    for iter in 0..MAX_ITER {
        let gnorm = norm_inf(&cur.gradient);
        grad_trace.push(gnorm);
        if gnorm <= GRAD_TOL {
            return Ok(FitResult {
                coefficients: beta,
                converged: true,
                iterations: iter,
                gradient_norm: gnorm,
                objective_trace: trace,
            });
        }
        let step = newton_step(&cur.hessian, &cur.gradient).map_err(|e| match e {
            Error::RankDeficient { .. } | Error::NotPositiveDefinite { .. } if check_norm => {
                Error::Separation {
                    model: model.to_string(),
                    norm: norm_inf(&beta),
                }
            }
            e => e,
        })?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, d)| b - t * d).collect();
            let obj = objective(&cand);
            // Near the optimum the objective change drops below rounding.
            if obj.is_finite() && obj <= cur.objective + 1e-13 * cur.objective.abs().max(1.0) {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            // No descent possible in floating point; accept only if at optimum.
            break;
        };
        beta = next;
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if check_norm && norm > SEPARATION_NORM {
            return Err(Error::Separation {
                model: model.to_string(),
                norm,
            });
        }
        cur = eval(&beta);
        trace.push(cur.objective);
    }
    let gnorm = norm_inf(&cur.gradient);
    if gnorm <= GRAD_TOL {
        return Ok(FitResult {
            coefficients: beta,
            converged: true,
            iterations: trace.len() - 1,
            gradient_norm: gnorm,
            objective_trace: trace,
        });
    }
    Err(Error::NoConvergence {
        model: model.to_string(),
        iterations: trace.len() - 1,
        trace: grad_trace,
    })
}

fn newton_step(hessian: &Matrix, gradient: &[f64]) -> Result<Vec<f64>> {
    match Cholesky::new(hessian) {
        Ok(c) => Ok(c.solve(gradient)),
        Err(Error::NotPositiveDefinite { .. }) => Err(Error::RankDeficient {
            columns: collinear_columns(hessian)?,
        }),
        Err(e) => Err(e),
    }
}

fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_design(x: &Matrix, n_resp: usize) -> Result<()> {
    if x.rows() != n_resp {
        return Err(Error::InvalidParameter(format!(
            "design has {} rows but response has {n_resp}",
            x.rows()
        )));
    }
    Ok(())
}

/// Logistic regression by IRLS (Newton on the Bernoulli log-likelihood).
pub fn logistic_fit(x: &Matrix, y: &[f64]) -> Result<FitResult> {
    check_design(x, y.len())?;
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidParameter("logistic response must be 0/1".into()));
    }
    let n = y.len() as f64;
    let ones = y.iter().sum::<f64>();
    if ones == 0.0 || ones == n {
        return Err(Error::InvalidData(
            "logistic response has no variation".into(),
        ));
    }
    let p = x.cols();
    let objective = |b: &[f64]| {
        (0..x.rows())
            .map(|i| {
                let eta = dot(x.row(i), b);
                log1p_exp(eta) - y[i] * eta
            })
            .sum::<f64>()
            / n
    };
    let eval = |b: &[f64]| {
        let mut obj = 0.0;
        let mut g = vec![0.0; p];
        let mut h = Matrix::zeros(p, p);
        for i in 0..x.rows() {
            let row = x.row(i);
            let eta = dot(row, b);
            obj += log1p_exp(eta) - y[i] * eta;
            let mu = expit(eta);
            let r = mu - y[i];
            for (gj, xj) in g.iter_mut().zip(row) {
                *gj += r * xj;
            }
            h.add_outer(row, mu * (1.0 - mu));
        }
        g.iter_mut().for_each(|v| *v /= n);
        h.scale(1.0 / n);
        Eval {
            objective: obj / n,
            gradient: g,
            hessian: h,
        }
    };
    let fit = newton("logistic", vec![0.0; p], eval, objective, true)?;
    // Separation shows up as every fitted probability pinned at its label;
    // Newton can meet the gradient tolerance before the norm blows up.
    let pin = GRAD_TOL.sqrt();
    let pinned = (0..x.rows()).all(|i| {
        let mu = expit(dot(x.row(i), &fit.coefficients));
        (y[i] - mu).abs() < pin
    });
    if pinned {
        return Err(Error::Separation {
            model: "logistic".into(),
            norm: norm_inf(&fit.coefficients),
        });
    }
    Ok(fit)
}

/// Softmax probabilities for one row. `coef` holds one block of `p`
/// coefficients per non-reference category, in increasing category order.
pub fn softmax_probs(row: &[f64], coef: &[f64], k: usize, reference: usize) -> Vec<f64> {
    let p = row.len();
    let mut eta = vec![0.0; k];
    let mut block = 0;
    for (c, e) in eta.iter_mut().enumerate() {
        if c == reference {
            continue;
        }
        *e = dot(row, &coef[block * p..(block + 1) * p]);
        block += 1;
    }
    let mx = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = eta.iter().map(|e| (e - mx).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= total);
    probs
}

/// Multinomial logistic regression with categories `0..k` and a fixed
/// reference category, by Newton with the observed information.
pub fn multinomial_fit(x: &Matrix, s: &[usize], k: usize, reference: usize) -> Result<FitResult> {
    check_design(x, s.len())?;
    if reference >= k || k < 2 {
        return Err(Error::InvalidParameter(format!(
            "need k >= 2 categories and reference < k (k={k}, reference={reference})"
        )));
    }
    if let Some(bad) = s.iter().find(|c| **c >= k) {
        return Err(Error::InvalidParameter(format!("category {bad} outside 0..{k}")));
    }
    for c in 0..k {
        if !s.contains(&c) {
            return Err(Error::InvalidData(format!("category {c} has no observations")));
        }
    }
    let p = x.cols();
    let q = (k - 1) * p;
    let n = s.len() as f64;
    let block_of = |c: usize| if c < reference { c } else { c - 1 };
    let nll = |row: &[f64], b: &[f64], c: usize| -> (f64, Vec<f64>) {
        let probs = softmax_probs(row, b, k, reference);
        (-probs[c].max(f64::MIN_POSITIVE).ln(), probs)
    };
    let objective = |b: &[f64]| {
        (0..x.rows()).map(|i| nll(x.row(i), b, s[i]).0).sum::<f64>() / n
    };
    let eval = |b: &[f64]| {
        let mut obj = 0.0;
        let mut g = vec![0.0; q];
        let mut h = Matrix::zeros(q, q);
        for i in 0..x.rows() {
            let row = x.row(i);
            let (l, probs) = nll(row, b, s[i]);
            obj += l;
            for c in (0..k).filter(|c| *c != reference) {
                let bc = block_of(c);
                let r = probs[c] - if s[i] == c { 1.0 } else { 0.0 };
                for j in 0..p {
                    g[bc * p + j] += r * row[j];
                }
                for d in (0..k).filter(|d| *d != reference) {
                    let bd = block_of(d);
                    let w = probs[c] * (if c == d { 1.0 } else { 0.0 } - probs[d]);
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..p {
                        let wj = w * row[j];
                        for l in 0..p {
                            h[(bc * p + j, bd * p + l)] += wj * row[l];
                        }
                    }
                }
            }
        }
        g.iter_mut().for_each(|v| *v /= n);
        h.scale(1.0 / n);
        Eval {
            objective: obj / n,
            gradient: g,
            hessian: h,
        }
    };
    newton("multinomial", vec![0.0; q], eval, objective, true)
}

/// Log-link mean regression, `log E[y|x] = xᵀβ`, fitted by Newton on a convex
/// quasi-likelihood.
pub fn loglink_fit(x: &Matrix, y: &[f64], family: LogLinkFamily) -> Result<FitResult> {
    loglink_fit_offset(x, y, None, family)
}

/// Log-link fit with a known per-row offset: `log μ = offset + xᵀβ`.
pub fn loglink_fit_offset(x: &Matrix, y: &[f64], offset: Option<&[f64]>, family: LogLinkFamily) -> Result<FitResult> {
    check_design(x, y.len())?;
    if let Some(o) = offset {
        if o.len() != y.len() {
            return Err(Error::InvalidParameter(format!("offset has {} rows but response has {}", o.len(), y.len())));
        }
    }
    let off = |i: usize| offset.map_or(0.0, |o| o[i]);
    if let Some(i) = y.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "log-link response must be positive (row {i} has {})",
            y[i]
        )));
    }
    let p = x.cols();
    let n = y.len() as f64;
    // Start from the least squares fit of log y, which is exact for
    // noiseless log-linear data; fall back to the intercept-style start.
    let logy: Vec<f64> = y.iter().enumerate().map(|(i, v)| v.ln() - off(i)).collect();
    let beta0 = match ols_fit(x, &logy, None) {
        Ok(f) => f.coefficients,
        Err(Error::RankDeficient { columns }) => return Err(Error::RankDeficient { columns }),
        Err(e) => return Err(e),
    };
    let term = |eta: f64, yi: f64| -> (f64, f64, f64) {
        // (objective, d/deta, d2/deta2)
        match family {
            LogLinkFamily::Gamma => {
                let r = yi * (-eta).exp();
                (r + eta, 1.0 - r, r)
            }
            LogLinkFamily::Quasi => {
                let mu = eta.exp();
                (mu - yi * eta, mu - yi, mu)
            }
        }
    };
    let objective = |b: &[f64]| {
        (0..x.rows())
            .map(|i| term(off(i) + dot(x.row(i), b), y[i]).0)
            .sum::<f64>()
            / n
    };
    let eval = |b: &[f64]| {
        let mut obj = 0.0;
        let mut g = vec![0.0; p];
        let mut h = Matrix::zeros(p, p);
        for i in 0..x.rows() {
            let row = x.row(i);
            let (o, d1, d2) = term(off(i) + dot(row, b), y[i]);
            obj += o;
            for (gj, xj) in g.iter_mut().zip(row) {
                *gj += d1 * xj;
            }
            h.add_outer(row, d2);
        }
        g.iter_mut().for_each(|v| *v /= n);
        h.scale(1.0 / n);
        Eval {
            objective: obj / n,
            gradient: g,
            hessian: h,
        }
    };
    newton("log-link", beta0, eval, objective, false)
}
