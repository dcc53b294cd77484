//! Estimators of the target-population causal mean ratio
//! `E{R(X)·Y | G=1} / E{Y | G=1}`.

use serde::{Deserialize, Serialize};

use crate::ate::{column_means, sandwich, unsupported_rows, variant_terms, Variant};
use crate::data::{Mode, StudyDataset};
use crate::error::{Error, Result};
use crate::numkit::{dot, inverse_general, newton_root, Matrix};
use crate::nuisance::{Basis, NuisanceTable, WeightChoice};
use crate::report::{mean, z_value, Diagnostics, WeightSummary, DEFAULT_LEVEL};

/// How the one-step correction of log ψ₁ is scaled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneStepDivisor {
    /// `log ψ₁ = log ψ₁ⁱⁿⁱᵗ + Pn φ₁ / ψ₁ⁱⁿⁱᵗ` (delta method).
    #[default]
    Psi1Init,
    /// `log ψ₁ = log ψ₁ⁱⁿⁱᵗ + Pn φ₁ / log ψ₁ⁱⁿⁱᵗ`, kept for comparison.
    LogPsi1Init,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub estimator: String,
    pub psi_hat: f64,
    pub log_psi: f64,
    pub log_se: Option<f64>,
    /// Natural-scale standard error, `ψ̂ · log_se`.
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub log_ci: Option<(f64, f64)>,
    pub ci_level: f64,
    pub psi1: f64,
    pub psi0: f64,
    pub if_psi1: Vec<f64>,
    pub if_psi0: Vec<f64>,
    /// Influence values of log ψ̂: `φ₁/ψ₁ − φ₀/ψ₀`.
    pub if_log: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl RatioEstimate {
    pub fn set_level(&mut self, level: f64) -> Result<()> {
        let z = z_value(level)?;
        self.ci_level = level;
        self.log_ci = self.log_se.map(|s| (self.log_psi - z * s, self.log_psi + z * s));
        self.ci = self.log_ci.map(|(lo, hi)| (lo.exp(), hi.exp()));
        Ok(())
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo <= truth && truth <= hi)
    }
}

fn require_ratio(data: &StudyDataset, table: &NuisanceTable) -> Result<()> {
    if data.mode() != Mode::Ratio {
        return Err(Error::InvalidParameter("ratio estimators need ratio-mode data".into()));
    }
    table.check(data)
}

/// Mean target outcome and its influence values `G/α·(Y − ψ₀)`.
fn psi0(data: &StudyDataset) -> Result<(f64, Vec<f64>)> {
    let alpha = data.alpha_hat();
    let y: Vec<f64> = data.target_rows().map(|r| r.y.unwrap()).collect();
    let psi0 = mean(&y);
    if !(psi0 > 0.0) {
        return Err(Error::InvalidData(format!("mean target outcome is {psi0}; the ratio is undefined")));
    }
    let phi = data
        .rows()
        .iter()
        .map(|r| if r.is_target() { (r.y.unwrap() - psi0) / alpha } else { 0.0 })
        .collect();
    Ok((psi0, phi))
}

fn finish(
    data: &StudyDataset,
    estimator: &str,
    psi1: f64,
    if_psi1: Vec<f64>,
    diagnostics: Diagnostics,
) -> Result<RatioEstimate> {
    if !(psi1 > 0.0) || !psi1.is_finite() {
        return Err(Error::Numeric(format!("{estimator}: numerator estimate {psi1} is not positive")));
    }
    let (psi0, if_psi0) = psi0(data)?;
    let if_log: Vec<f64> = if_psi1.iter().zip(&if_psi0).map(|(a, b)| a / psi1 - b / psi0).collect();
    let n = if_log.len() as f64;
    let centre = mean(&if_log);
    let var = if_log.iter().map(|v| (v - centre).powi(2)).sum::<f64>() / n;
    let log_se = (var / n).sqrt();
    let psi = psi1 / psi0;
    let mut est = RatioEstimate {
        estimator: estimator.to_string(),
        psi_hat: psi,
        log_psi: psi.ln(),
        log_se: Some(log_se),
        se: Some(psi * log_se),
        ci: None,
        log_ci: None,
        ci_level: DEFAULT_LEVEL,
        psi1,
        psi0,
        if_psi1,
        if_psi0,
        if_log,
        diagnostics,
    };
    est.set_level(DEFAULT_LEVEL)?;
    Ok(est)
}

/// `Pn{G·R̂(X)·Y} / Pn{G·Y}`.
pub fn gformula_cmr(data: &StudyDataset, table: &NuisanceTable) -> Result<RatioEstimate> {
    require_ratio(data, table)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (r, rx) in data.rows().iter().zip(&table.effect) {
        if r.is_target() {
            num += rx * r.y.unwrap();
            den += r.y.unwrap();
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidData("target outcomes sum to zero".into()));
    }
    let n1 = data.n_target() as f64;
    let psi = num / den;
    Ok(RatioEstimate {
        estimator: "gformula_cmr".into(),
        psi_hat: psi,
        log_psi: psi.ln(),
        log_se: None,
        se: None,
        ci: None,
        log_ci: None,
        ci_level: DEFAULT_LEVEL,
        psi1: num / n1,
        psi0: den / n1,
        if_psi1: Vec::new(),
        if_psi0: Vec::new(),
        if_log: Vec::new(),
        diagnostics: Diagnostics {
            notes: vec!["plug-in estimator; no standard error".into()],
            ..Default::default()
        },
    })
}

/// Result of the log-scale one-step update of ψ₁.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStep {
    pub psi1_init: f64,
    pub psi1: f64,
    /// Influence values of ψ̂₁ evaluated at the updated estimate.
    pub phi1: Vec<f64>,
}

/// `aug` holds the source-row augmentation before division by α̂; `r` the
/// per-row ratio used in the target term.
fn one_step(data: &StudyDataset, aug: &[f64], r: &[f64], divisor: OneStepDivisor) -> Result<OneStep> {
    let n1 = data.n_target() as f64;
    let alpha = data.alpha_hat();
    let mut init = 0.0;
    for (row, ri) in data.rows().iter().zip(r) {
        if row.is_target() {
            init += ri * row.y.unwrap();
        }
    }
    init /= n1;
    if !(init > 0.0) {
        return Err(Error::Numeric(format!("initial numerator estimate {init} is not positive")));
    }
    // Pn φ₁ at the initial value: the target term averages to zero there.
    let correction = aug.iter().sum::<f64>() / n1;
    let log_psi1 = match divisor {
        OneStepDivisor::Psi1Init => init.ln() + correction / init,
        OneStepDivisor::LogPsi1Init => init.ln() + correction / init.ln(),
    };
    let psi1 = log_psi1.exp();
    if !psi1.is_finite() {
        return Err(Error::Numeric(format!("one-step update diverged (log ψ₁ = {log_psi1})")));
    }
    let phi1 = data
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let g = if row.is_target() { r[i] * row.y.unwrap() - psi1 } else { 0.0 };
            (aug[i] + g) / alpha
        })
        .collect();
    Ok(OneStep { psi1_init: init, psi1, phi1 })
}

fn augmentation(data: &StudyDataset, table: &NuisanceTable, h: &[Vec<f64>]) -> Vec<f64> {
    let qx = table.target_q.as_ref().expect("checked ratio table");
    data.rows()
        .iter()
        .enumerate()
        .map(|(i, r)| match r.trial() {
            Some(k) if table.supported(i, k) => {
                let a = r.a.unwrap();
                let sign = if a == 1 { 1.0 } else { -1.0 };
                let q = table.q(a, i, k);
                table.pi[i] / (1.0 - table.pi[i]) * table.effect[i] * qx[i] * h[i][k] * sign / table.e(a, i, k)
                    * (r.y.unwrap() - q)
                    / q
            }
            _ => 0.0,
        })
        .collect()
}

pub fn onestep_psi1(
    data: &StudyDataset,
    table: &NuisanceTable,
    choice: &WeightChoice,
    divisor: OneStepDivisor,
) -> Result<OneStep> {
    require_ratio(data, table)?;
    let w = table.weights(choice)?;
    let h = table.normalized(&w)?;
    one_step(data, &augmentation(data, table, &h), &table.effect, divisor)
}

fn diagnostics(data: &StudyDataset, table: &NuisanceTable) -> Diagnostics {
    Diagnostics {
        unsupported_rows: unsupported_rows(data, table),
        pi_clipped: table.pi_clipped,
        nuisance_status: table.status.clone(),
        ..Default::default()
    }
}

pub fn cmr_estimate(data: &StudyDataset, table: &NuisanceTable, choice: &WeightChoice) -> Result<RatioEstimate> {
    cmr_estimate_with(data, table, choice, OneStepDivisor::default())
}

pub fn cmr_estimate_with(
    data: &StudyDataset,
    table: &NuisanceTable,
    choice: &WeightChoice,
    divisor: OneStepDivisor,
) -> Result<RatioEstimate> {
    require_ratio(data, table)?;
    let w = table.weights(choice)?;
    let h = table.normalized(&w)?;
    let step = one_step(data, &augmentation(data, table, &h), &table.effect, divisor)?;
    let mut diag = diagnostics(data, table);
    diag.ee_residual = Some(mean(&step.phi1).abs());
    diag.weights = Some(WeightSummary::of(&w, |i, k| table.supported(i, k)));
    finish(data, &format!("cmr[{choice}]"), step.psi1, step.phi1, diag)
}

pub fn cmr_variant(data: &StudyDataset, table: &NuisanceTable, variant: Variant) -> Result<RatioEstimate> {
    require_ratio(data, table)?;
    let terms = variant_terms(table, variant)?;
    let qx = table.target_q.as_ref().expect("checked ratio table");
    let r: Vec<f64> = terms.q.iter().map(|q| q[1] / q[0]).collect();
    let aug: Vec<f64> = data
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| match row.trial() {
            Some(k) if table.supported(i, k) => {
                let a = row.a.unwrap() as usize;
                let sign = if a == 1 { 1.0 } else { -1.0 };
                let q = terms.q[i][a];
                table.pi[i] / (1.0 - table.pi[i]) * r[i] * qx[i] * sign * terms.factor[i][a][k] * (row.y.unwrap() - q) / q
            }
            _ => 0.0,
        })
        .collect();
    let step = one_step(data, &aug, &r, OneStepDivisor::default())?;
    let name = match variant {
        Variant::Pooled => "cmr_pooled",
        Variant::Armwise => "cmr_armwise",
    };
    finish(data, name, step.psi1, step.phi1, diagnostics(data, table))
}

/// Single source trial: no trial weighting, e(a|x) and Q(a,x) from the one
/// trial.
pub fn single_source_cmr(data: &StudyDataset, table: &NuisanceTable) -> Result<RatioEstimate> {
    require_ratio(data, table)?;
    if data.m() != 1 {
        return Err(Error::InvalidParameter(format!("single-source estimator needs m=1, got m={}", data.m())));
    }
    let qx = table.target_q.as_ref().expect("checked ratio table");
    let r: Vec<f64> = (0..data.n()).map(|i| table.q1(i, 0) / table.q0[i][0]).collect();
    let aug: Vec<f64> = data
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.is_target() {
                return 0.0;
            }
            let a = row.a.unwrap();
            let sign = if a == 1 { 1.0 } else { -1.0 };
            let q = table.q(a, i, 0);
            table.pi[i] / (1.0 - table.pi[i]) * r[i] * qx[i] * sign / (table.e(a, i, 0) * q) * (row.y.unwrap() - q)
        })
        .collect();
    let step = one_step(data, &aug, &r, OneStepDivisor::default())?;
    finish(data, "single_source_cmr", step.psi1, step.phi1, diagnostics(data, table))
}

/// Per-row pieces of the ratio efficient score: `(b, f, f')` with
/// `𝒮 = b·f(η)` and `η = bᵀβ`.
fn score_r_parts(
    data: &StudyDataset,
    table: &NuisanceTable,
    basis: &Basis,
    beta: &[f64],
) -> Result<Vec<Option<(Vec<f64>, f64, f64)>>> {
    data.rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let Some(k) = r.trial() else { return Ok(None) };
            let q0 = table.q0[i][k];
            if !(q0 > 0.0) {
                return Err(Error::InvalidParameter(format!("row {}: Q0 = {q0} must be positive", i + 1)));
            }
            let a = f64::from(r.a.unwrap());
            let b = basis.eval(&r.x);
            let rr = dot(&b, beta).exp();
            let v1 = 1.0 / table.v1[i][k];
            let v0 = 1.0 / table.v0[i][k];
            let e1 = table.e1[i][k];
            let e0 = 1.0 - e1;
            let va = if a == 1.0 { v1 } else { v0 };
            let ra = rr.powf(a);
            let den = v1 * rr * rr * e1 + v0 * e0;
            let num = v1 * rr * ra * e1;
            let bracket = a - num / den;
            let resid = r.y.unwrap() - q0 * ra;
            let f = q0 * rr * bracket * va * resid;
            let d_ratio = num * ((1.0 + a) * den - 2.0 * v1 * rr * rr * e1) / (den * den);
            let d_resid = -q0 * a * ra;
            let fp = q0 * va * (rr * bracket * resid - rr * d_ratio * resid + rr * bracket * d_resid);
            Ok(Some((b, f, fp)))
        })
        .collect()
}

/// Efficient score for `R(x) = exp(b(x)ᵀβ)` on every row (zero on target rows).
pub fn efficient_score_r(data: &StudyDataset, table: &NuisanceTable, basis: &Basis, beta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let kdim = basis.len();
    Ok(score_r_parts(data, table, basis, beta)?
        .into_iter()
        .map(|p| match p {
            Some((b, f, _)) => b.iter().map(|bj| bj * f).collect(),
            None => vec![0.0; kdim],
        })
        .collect())
}

/// Exact Jacobian of `Pn 𝒮` with respect to β.
pub fn score_jacobian_r(data: &StudyDataset, table: &NuisanceTable, basis: &Basis, beta: &[f64]) -> Result<Matrix> {
    let kdim = basis.len();
    let mut j = Matrix::zeros(kdim, kdim);
    for (b, _, fp) in score_r_parts(data, table, basis, beta)?.into_iter().flatten() {
        j.add_outer(&b, fp);
    }
    j.scale(1.0 / data.n() as f64);
    Ok(j)
}

/// `M̂ = −Pn[(1−G)·Q0²·v1·A·∇R∇Rᵀ·v0·e0/den]`: the Jacobian with the
/// mean-zero residual terms dropped.
pub fn m_hat_r(data: &StudyDataset, table: &NuisanceTable, basis: &Basis, beta: &[f64]) -> Matrix {
    let kdim = basis.len();
    let mut m = Matrix::zeros(kdim, kdim);
    for (i, r) in data.rows().iter().enumerate() {
        let Some(k) = r.trial() else { continue };
        if r.a != Some(1) {
            continue;
        }
        let b = basis.eval(&r.x);
        let rr = dot(&b, beta).exp();
        let v1 = 1.0 / table.v1[i][k];
        let v0 = 1.0 / table.v0[i][k];
        let e1 = table.e1[i][k];
        let e0 = 1.0 - e1;
        let den = v1 * rr * rr * e1 + v0 * e0;
        let q0 = table.q0[i][k];
        m.add_outer(&b, -q0 * q0 * v1 * rr * rr * v0 * e0 / den);
    }
    m.scale(1.0 / data.n() as f64);
    m
}

#[derive(Debug, Clone, Serialize)]
pub struct ParametricRatio {
    pub basis: Basis,
    pub beta: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub iterations: usize,
    pub score_norm: f64,
    #[serde(skip)]
    pub m_hat: Matrix,
    #[serde(skip)]
    pub scores: Vec<Vec<f64>>,
}

impl ParametricRatio {
    pub fn ratio(&self, x: &[f64]) -> f64 {
        self.basis.dot(x, &self.beta).exp()
    }
}

/// Solves the ratio efficient-score equation by Newton on the exact
/// Jacobian; the sandwich uses M̂.
pub fn solve_beta_r(data: &StudyDataset, table: &NuisanceTable, basis: &Basis, beta0: &[f64]) -> Result<ParametricRatio> {
    require_ratio_sources(data, table)?;
    basis.check(data.p(), false, "parametric ratio")?;
    if beta0.len() != basis.len() {
        return Err(Error::InvalidParameter(format!("start has {} entries for {} basis terms", beta0.len(), basis.len())));
    }
    let kdim = basis.len();
    let f = |b: &[f64]| {
        let s = efficient_score_r(data, table, basis, b)?;
        Ok((column_means(&s, kdim), score_jacobian_r(data, table, basis, b)?))
    };
    let root = newton_root("parametric ratio score", f, beta0.to_vec())?;
    let scores = efficient_score_r(data, table, basis, &root.x)?;
    let m = m_hat_r(data, table, basis, &root.x);
    let m_inv = inverse_general(&m)?;
    Ok(ParametricRatio {
        basis: basis.clone(),
        vcov: sandwich(&m_inv, &scores).to_rows(),
        beta: root.x,
        iterations: root.iterations,
        score_norm: *root.trace.last().unwrap(),
        m_hat: m,
        scores,
    })
}

/// The semiparametric path needs Q0, V and e but not π, η or Q(x).
fn require_ratio_sources(data: &StudyDataset, table: &NuisanceTable) -> Result<()> {
    if data.mode() != Mode::Ratio {
        return Err(Error::InvalidParameter("ratio estimators need ratio-mode data".into()));
    }
    let n = data.n();
    if table.q0.len() != n || table.v0.len() != n || table.v1.len() != n || table.e1.len() != n {
        return Err(Error::InvalidParameter("nuisance table does not match the dataset".into()));
    }
    Ok(())
}

/// Plug-in ratio from a parametric R, with the score propagated into the
/// numerator's influence function.
pub fn psi_sp_r(data: &StudyDataset, fit: &ParametricRatio) -> Result<RatioEstimate> {
    let n1 = data.n_target() as f64;
    let alpha = data.alpha_hat();
    let kdim = fit.basis.len();
    let mut grad = vec![0.0; kdim];
    let mut psi1 = 0.0;
    let mut ry = vec![0.0; data.n()];
    for (i, r) in data.rows().iter().enumerate() {
        if r.is_target() {
            let b = fit.basis.eval(&r.x);
            let rr = dot(&b, &fit.beta).exp();
            let y = r.y.unwrap();
            ry[i] = rr * y;
            psi1 += ry[i];
            grad.iter_mut().zip(&b).for_each(|(g, bj)| *g += rr * bj * y);
        }
    }
    psi1 /= n1;
    grad.iter_mut().for_each(|g| *g /= n1);
    let m_inv = inverse_general(&fit.m_hat)?;
    let lead = m_inv.transpose().mul_vec(&grad);
    let phi1 = data
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let g = if r.is_target() { (ry[i] - psi1) / alpha } else { 0.0 };
            g - dot(&lead, &fit.scores[i])
        })
        .collect();
    let diag = Diagnostics { ee_residual: Some(fit.score_norm), ..Default::default() };
    finish(data, "psi_sp_r", psi1, phi1, diag)
}
