//! Estimators of the target-population average treatment effect.

use serde::{Deserialize, Serialize};

use crate::data::{Mode, StudyDataset};
use crate::error::{Error, Result};
use crate::numkit::{inverse_general, newton_root, ols_fit, FitResult, Matrix};
use crate::nuisance::{Basis, NuisanceTable, WeightChoice};
use crate::report::{mean, Diagnostics, EstimateReport, WeightSummary};

fn require_difference(data: &StudyDataset, table: &NuisanceTable) -> Result<()> {
    if data.mode() != Mode::Difference {
        return Err(Error::InvalidParameter("ATE estimators need difference-mode data".into()));
    }
    table.check(data)
}

fn base_diagnostics(data: &StudyDataset, table: &NuisanceTable) -> Diagnostics {
    let mut d = Diagnostics {
        unsupported_rows: unsupported_rows(data, table),
        pi_clipped: table.pi_clipped,
        nuisance_status: table.status.clone(),
        ..Default::default()
    };
    if table.pi_clipped * 100 > data.n() {
        d.notes.push(format!("selection probabilities clipped on {} of {} rows", table.pi_clipped, data.n()));
    }
    d
}

pub(crate) fn unsupported_rows(data: &StudyDataset, table: &NuisanceTable) -> usize {
    data.rows()
        .iter()
        .enumerate()
        .filter(|(i, r)| r.trial().is_some_and(|k| !table.supported(*i, k)))
        .count()
}

/// `(1/α̂)·Pn{G·D̂(X)}`, the mean of D̂ over target rows.
pub fn gformula_ate(data: &StudyDataset, table: &NuisanceTable) -> Result<EstimateReport> {
    require_difference(data, table)?;
    let d: Vec<f64> = data.rows().iter().zip(&table.effect).filter(|(r, _)| r.is_target()).map(|(_, d)| *d).collect();
    let mut diag = base_diagnostics(data, table);
    diag.notes.push("plug-in estimator; no standard error".into());
    Ok(EstimateReport::plug_in("gformula_ate", mean(&d), diag))
}

/// Inverse-weighting representation. `h` must have unit conditional mean
/// under η; `None` means h ≡ 1.
pub fn ipw_ate(data: &StudyDataset, table: &NuisanceTable, h: Option<&[Vec<f64>]>) -> Result<EstimateReport> {
    require_difference(data, table)?;
    let n1 = data.n_target() as f64;
    let mut total = 0.0;
    for (i, r) in data.rows().iter().enumerate() {
        let Some(k) = r.trial() else { continue };
        if !table.supported(i, k) {
            continue;
        }
        let a = r.a.unwrap();
        let hk = h.map_or(1.0, |h| h[i][k]);
        let sign = if a == 1 { 1.0 } else { -1.0 };
        total += table.pi[i] / (1.0 - table.pi[i]) * hk * sign / table.e(a, i, k) * r.y.unwrap();
    }
    Ok(EstimateReport::plug_in("ipw_ate", total / n1, base_diagnostics(data, table)))
}

/// Augmentation term of the influence function (before division by α̂)
/// for every row, using the normalized weights `h`.
fn augmentation(data: &StudyDataset, table: &NuisanceTable, h: &[Vec<f64>]) -> Vec<f64> {
    data.rows()
        .iter()
        .enumerate()
        .map(|(i, r)| match r.trial() {
            Some(k) if table.supported(i, k) => {
                let a = r.a.unwrap();
                let sign = if a == 1 { 1.0 } else { -1.0 };
                table.pi[i] / (1.0 - table.pi[i]) * h[i][k] * sign / table.e(a, i, k) * (r.y.unwrap() - table.q(a, i, k))
            }
            _ => 0.0,
        })
        .collect()
}

/// Closed-form solution of `Pn φ = 0` given augmentation terms and the
/// per-row effect used in the target term.
fn solve_linear_ee(data: &StudyDataset, aug: &[f64], effect: &[f64]) -> (f64, Vec<f64>) {
    let n = data.n() as f64;
    let n1 = data.n_target() as f64;
    let alpha = n1 / n;
    let mut num = aug.iter().sum::<f64>();
    for (r, d) in data.rows().iter().zip(effect) {
        if r.is_target() {
            num += d;
        }
    }
    let psi = num / n1;
    let phi = data
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let g = if r.is_target() { effect[i] - psi } else { 0.0 };
            (aug[i] + g) / alpha
        })
        .collect();
    (psi, phi)
}

/// Efficient estimating-equation estimator with a chosen trial weighting.
pub fn eif_ate(data: &StudyDataset, table: &NuisanceTable, choice: &WeightChoice) -> Result<EstimateReport> {
    require_difference(data, table)?;
    let w = table.weights(choice)?;
    let h = table.normalized(&w)?;
    let aug = augmentation(data, table, &h);
    let (psi, phi) = solve_linear_ee(data, &aug, &table.effect);
    let mut diag = base_diagnostics(data, table);
    diag.ee_residual = Some(mean(&phi).abs());
    diag.weights = Some(WeightSummary::of(&w, |i, k| table.supported(i, k)));
    Ok(EstimateReport::with_if(&format!("eif_ate[{choice}]"), psi, phi, diag))
}

/// Stronger working models than trial-invariant effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Outcome law identical across trials given (X, A): pooled Q(a,x), e(a|x).
    Pooled,
    /// Arm-specific means identical across trials, weights 1/V(a,x,s).
    Armwise,
}

/// Per-row pooled quantities `(Q(0,x), Q(1,x), c(0,x,s), c(1,x,s))`, where
/// `c(a,x,s)` is the inverse-probability factor applied to a residual of a
/// subject in trial s and arm a.
pub(crate) struct VariantTerms {
    pub q: Vec<[f64; 2]>,
    pub factor: Vec<[Vec<f64>; 2]>,
}

pub(crate) fn variant_terms(table: &NuisanceTable, variant: Variant) -> Result<VariantTerms> {
    let n = table.n();
    let m = table.m;
    let mut q = Vec::with_capacity(n);
    let mut factor = Vec::with_capacity(n);
    for i in 0..n {
        let mut qi = [0.0; 2];
        let mut fi: [Vec<f64>; 2] = [vec![0.0; m], vec![0.0; m]];
        for a in 0..2u8 {
            // mixing weight of trial k in the pooled arm-a mean
            let mix: Vec<f64> = (0..m)
                .map(|k| {
                    let base = table.eta[i][k] * table.e(a, i, k);
                    match variant {
                        Variant::Pooled => base,
                        Variant::Armwise => base / table.v(a, i, k),
                    }
                })
                .collect();
            let denom: f64 = mix.iter().sum();
            if !(denom > 0.0) || !denom.is_finite() {
                return Err(Error::Numeric(format!("row {}: pooled arm-{a} denominator is {denom}", i + 1)));
            }
            qi[a as usize] = (0..m).map(|k| mix[k] * table.q(a, i, k)).sum::<f64>() / denom;
            for k in 0..m {
                fi[a as usize][k] = match variant {
                    Variant::Pooled => 1.0 / denom,
                    Variant::Armwise => 1.0 / (table.v(a, i, k) * denom),
                };
            }
        }
        q.push(qi);
        factor.push(fi);
    }
    Ok(VariantTerms { q, factor })
}

pub fn eif_ate_variant(data: &StudyDataset, table: &NuisanceTable, variant: Variant) -> Result<EstimateReport> {
    require_difference(data, table)?;
    let terms = variant_terms(table, variant)?;
    let aug: Vec<f64> = data
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| match r.trial() {
            Some(k) if table.supported(i, k) => {
                let a = r.a.unwrap() as usize;
                let sign = if a == 1 { 1.0 } else { -1.0 };
                table.pi[i] / (1.0 - table.pi[i]) * sign * terms.factor[i][a][k] * (r.y.unwrap() - terms.q[i][a])
            }
            _ => 0.0,
        })
        .collect();
    let effect: Vec<f64> = terms.q.iter().map(|q| q[1] - q[0]).collect();
    let (psi, phi) = solve_linear_ee(data, &aug, &effect);
    let mut diag = base_diagnostics(data, table);
    diag.ee_residual = Some(mean(&phi).abs());
    let name = match variant {
        Variant::Pooled => "eif_ate_pooled",
        Variant::Armwise => "eif_ate_armwise",
    };
    Ok(EstimateReport::with_if(name, psi, phi, diag))
}

/// Plug-in difference between the asymptotic variances of the optimally
/// weighted and the constant-weight estimators (never positive).
pub fn efficiency_gap(data: &StudyDataset, table: &NuisanceTable) -> Result<f64> {
    require_difference(data, table)?;
    let w = table.weights(&WeightChoice::Optimal)?;
    let alpha = data.alpha_hat();
    let mut total = 0.0;
    for i in 0..table.n() {
        let (mut sw, mut sinv) = (0.0, 0.0);
        for k in 0..table.m {
            let eta = if table.supported(i, k) { table.eta[i][k] } else { 0.0 };
            sw += eta * w.w[i][k];
            sinv += eta / w.w[i][k];
        }
        let pi = table.pi[i];
        total += pi * pi / (alpha * alpha * (1.0 - pi)) * (1.0 / sw - sinv);
    }
    Ok(total / table.n() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomes {
    /// Dataset row index of each source row.
    pub rows: Vec<usize>,
    pub zeta: Vec<f64>,
}

/// DR-learner pseudo-outcomes on source rows.
pub fn drlearner_pseudo(data: &StudyDataset, table: &NuisanceTable, choice: &WeightChoice) -> Result<PseudoOutcomes> {
    require_difference(data, table)?;
    let w = table.weights(choice)?;
    let h = table.normalized(&w)?;
    let mut rows = Vec::new();
    let mut zeta = Vec::new();
    for (i, r) in data.rows().iter().enumerate() {
        let Some(k) = r.trial() else { continue };
        let a = r.a.unwrap();
        let sign = if a == 1 { 1.0 } else { -1.0 };
        let resid = if table.supported(i, k) {
            h[i][k] * sign / table.e(a, i, k) * (r.y.unwrap() - table.q(a, i, k))
        } else {
            0.0
        };
        rows.push(i);
        zeta.push(resid + table.effect[i]);
    }
    Ok(PseudoOutcomes { rows, zeta })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrLearner {
    pub basis: Basis,
    pub coefficients: Vec<f64>,
    pub fit: FitResult,
}

impl DrLearner {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.basis.dot(x, &self.coefficients)
    }
}

pub fn drlearner_fit(data: &StudyDataset, pseudo: &PseudoOutcomes, basis: &Basis) -> Result<DrLearner> {
    basis.check(data.p(), false, "DR-learner")?;
    let x = basis.design(pseudo.rows.iter().map(|&i| data.rows()[i].x.as_slice()))?;
    let fit = ols_fit(&x, &pseudo.zeta, None)?;
    Ok(DrLearner { basis: basis.clone(), coefficients: fit.coefficients.clone(), fit })
}

/// Arm-balancing factor `v1·e1 / (v1·e1 + v0·e0)` with `v = 1/V`.
fn balance(table: &NuisanceTable, i: usize, k: usize) -> (f64, f64, f64) {
    let v1 = 1.0 / table.v1[i][k];
    let v0 = 1.0 / table.v0[i][k];
    let e1 = table.e1[i][k];
    let den = v1 * e1 + v0 * (1.0 - e1);
    (v1, v0, den)
}

/// Efficient score of a linear CATE `D(x) = b(x)ᵀβ` for every row (zero on
/// target rows).
pub fn efficient_score_d(data: &StudyDataset, table: &NuisanceTable, basis: &Basis, beta: &[f64]) -> Vec<Vec<f64>> {
    let kdim = basis.len();
    data.rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let Some(k) = r.trial() else { return vec![0.0; kdim] };
            let a = r.a.unwrap();
            let b = basis.eval(&r.x);
            let (v1, v0, den) = balance(table, i, k);
            let e1 = table.e1[i][k];
            let bracket = f64::from(a) - v1 * e1 / den;
            let va = if a == 1 { v1 } else { v0 };
            let d = crate::numkit::dot(&b, beta);
            let resid = r.y.unwrap() - table.q0[i][k] - f64::from(a) * d;
            b.iter().map(|bj| bj * bracket * va * resid).collect()
        })
        .collect()
}

/// `M̂ = −Pn[(1−G)·v1·A·(v0·e0/den)·b·bᵀ]`, the exact Jacobian of Pn 𝒮.
fn m_hat_d(data: &StudyDataset, table: &NuisanceTable, basis: &Basis) -> Result<Matrix> {
    let kdim = basis.len();
    let mut m = Matrix::zeros(kdim, kdim);
    for (i, r) in data.rows().iter().enumerate() {
        let Some(k) = r.trial() else { continue };
        if r.a != Some(1) {
            continue;
        }
        let (v1, v0, den) = balance(table, i, k);
        let e0 = 1.0 - table.e1[i][k];
        m.add_outer(&basis.eval(&r.x), -v1 * v0 * e0 / den);
    }
    m.scale(1.0 / data.n() as f64);
    Ok(m)
}

pub(crate) fn column_means(rows: &[Vec<f64>], kdim: usize) -> Vec<f64> {
    let mut out = vec![0.0; kdim];
    for r in rows {
        out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    out
}

/// `M⁻¹·Pn(𝒮𝒮ᵀ)·M⁻ᵀ / n`.
pub(crate) fn sandwich(m_inv: &Matrix, scores: &[Vec<f64>]) -> Matrix {
    let kdim = m_inv.rows();
    let mut meat = Matrix::zeros(kdim, kdim);
    for s in scores {
        meat.add_outer(s, 1.0);
    }
    let n = scores.len() as f64;
    meat.scale(1.0 / n);
    let mut v = m_inv.mul(&meat).mul(&m_inv.transpose());
    v.scale(1.0 / n);
    // symmetrize rounding
    for i in 0..kdim {
        for j in 0..i {
            let s = 0.5 * (v[(i, j)] + v[(j, i)]);
            v[(i, j)] = s;
            v[(j, i)] = s;
        }
    }
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct ParametricCate {
    pub basis: Basis,
    pub beta: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub iterations: usize,
    /// ‖Pn 𝒮‖∞ at the solution.
    pub score_norm: f64,
    #[serde(skip)]
    pub m_hat: Matrix,
    #[serde(skip)]
    pub scores: Vec<Vec<f64>>,
}

/// Solves the efficient-score equation for a linear CATE by Newton.
pub fn solve_beta_d(data: &StudyDataset, table: &NuisanceTable, basis: &Basis, beta0: &[f64]) -> Result<ParametricCate> {
    require_difference(data, table)?;
    basis.check(data.p(), false, "parametric CATE")?;
    if beta0.len() != basis.len() {
        return Err(Error::InvalidParameter(format!("start has {} entries for {} basis terms", beta0.len(), basis.len())));
    }
    let m = m_hat_d(data, table, basis)?;
    let kdim = basis.len();
    let f = |b: &[f64]| Ok((column_means(&efficient_score_d(data, table, basis, b), kdim), m.clone()));
    let root = newton_root("parametric CATE score", f, beta0.to_vec())?;
    let scores = efficient_score_d(data, table, basis, &root.x);
    let m_inv = inverse_general(&m)?;
    let vcov = sandwich(&m_inv, &scores).to_rows();
    Ok(ParametricCate {
        basis: basis.clone(),
        beta: root.x,
        vcov,
        iterations: root.iterations,
        score_norm: *root.trace.last().unwrap(),
        m_hat: m,
        scores,
    })
}

/// Plug-in target ATE from a parametric CATE, with the score propagated
/// into its influence function.
pub fn psi_sp_d(data: &StudyDataset, cate: &ParametricCate) -> Result<EstimateReport> {
    let n = data.n() as f64;
    let n1 = data.n_target() as f64;
    let alpha = n1 / n;
    let kdim = cate.basis.len();
    let mut gb = vec![0.0; kdim];
    let mut total = 0.0;
    let mut d = vec![0.0; data.n()];
    for (i, r) in data.rows().iter().enumerate() {
        if r.is_target() {
            let b = cate.basis.eval(&r.x);
            d[i] = crate::numkit::dot(&b, &cate.beta);
            total += d[i];
            gb.iter_mut().zip(&b).for_each(|(g, bj)| *g += bj);
        }
    }
    let psi = total / n1;
    // (Pn{G b}/α̂)ᵀ M⁻¹ = (M⁻ᵀ · gb/n1)ᵀ
    gb.iter_mut().for_each(|g| *g /= n1);
    let m_inv = inverse_general(&cate.m_hat)?;
    let lead = m_inv.transpose().mul_vec(&gb);
    let phi = data
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let g = if r.is_target() { (d[i] - psi) / alpha } else { 0.0 };
            g - crate::numkit::dot(&lead, &cate.scores[i])
        })
        .collect();
    let diag = Diagnostics { ee_residual: Some(cate.score_norm), ..Default::default() };
    Ok(EstimateReport::with_if("psi_sp_d", psi, phi, diag))
}
