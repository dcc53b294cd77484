//! Fitted nuisance regressions: selection π, affiliation η, propensity e,
//! constrained outcome regressions, variance working models and the target
//! outcome mean.

use serde::{Deserialize, Serialize};

use super::basis::{Basis, ControlBasis};
use crate::data::{Mode, StudyDataset};
use crate::error::{Error, Result};
use crate::numkit::{expit, logistic_fit, loglink_fit, loglink_fit_offset, multinomial_fit, ols_fit, softmax_probs};
use crate::numkit::{FitResult, LogLinkFamily, Matrix};

pub const PROB_CLIP: (f64, f64) = (1e-6, 1.0 - 1e-6);

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP.0, PROB_CLIP.1)
}

/// π(x) = P(G=1 | x).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionModel {
    pub basis: Basis,
    pub coefficients: Vec<f64>,
    pub clip: (f64, f64),
    pub fit: FitResult,
}

impl SelectionModel {
    pub fn prob(&self, x: &[f64]) -> f64 {
        expit(self.basis.dot(x, &self.coefficients)).clamp(self.clip.0, self.clip.1)
    }

    /// True when the unclipped probability falls outside the clip range.
    pub fn clipped(&self, x: &[f64]) -> bool {
        let p = expit(self.basis.dot(x, &self.coefficients));
        p < self.clip.0 || p > self.clip.1
    }
}

pub fn fit_selection(data: &StudyDataset, basis: &Basis) -> Result<SelectionModel> {
    basis.check(data.p(), false, "selection")?;
    let x = basis.design(data.rows().iter().map(|r| r.x.as_slice()))?;
    let g: Vec<f64> = data.rows().iter().map(|r| f64::from(r.g)).collect();
    let fit = logistic_fit(&x, &g).map_err(|e| e.in_nuisance("selection model π"))?;
    Ok(SelectionModel {
        basis: basis.clone(),
        coefficients: fit.coefficients.clone(),
        clip: PROB_CLIP,
        fit,
    })
}

/// Known hard thresholds on one covariate restricting which trials can
/// enrol a subject. Segment `j` covers `cuts[j-1] < x <= cuts[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// 0-based covariate index.
    pub covariate: usize,
    pub cuts: Vec<f64>,
    /// 1-based trial ids allowed in each of the `cuts.len() + 1` segments.
    pub allowed: Vec<Vec<usize>>,
}

impl Segmentation {
    pub fn validate(&self, m: usize, p: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(format!("segmentation: {msg}")));
        if self.covariate >= p {
            return bad(format!("covariate {} but p={p}", self.covariate + 1));
        }
        if self.cuts.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("cut points must be strictly increasing".into());
        }
        if self.allowed.len() != self.cuts.len() + 1 {
            return bad(format!("{} cuts need {} allowed sets", self.cuts.len(), self.cuts.len() + 1));
        }
        for set in &self.allowed {
            if set.is_empty() || set.iter().any(|s| *s == 0 || *s > m) || set.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("allowed set {set:?} must be increasing ids in 1..={m}"));
            }
        }
        Ok(())
    }

    pub fn segment(&self, x: &[f64]) -> usize {
        self.cuts.iter().filter(|c| **c < x[self.covariate]).count()
    }

    pub fn allowed_at(&self, x: &[f64]) -> &[usize] {
        &self.allowed[self.segment(x)]
    }
}

/// η(s | x) = P(S=s | x, G=0).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AffiliationModel {
    /// One source trial: η ≡ 1.
    Single,
    /// Multinomial logistic over all trials, reference trial 1.
    Global { basis: Basis, m: usize, coefficients: Vec<f64> },
    /// Separate multinomial fits inside each segment of a known
    /// segmentation; η is exactly zero for trials not allowed in a segment.
    Segmented {
        segmentation: Segmentation,
        basis: Basis,
        m: usize,
        coefficients: Vec<Vec<f64>>,
    },
}

fn clip_renormalize(probs: &mut [f64], active: impl Fn(usize) -> bool) {
    let mut total = 0.0;
    for (k, p) in probs.iter_mut().enumerate() {
        if active(k) {
            *p = clip(*p);
            total += *p;
        }
    }
    probs.iter_mut().for_each(|p| *p /= total);
}

impl AffiliationModel {
    pub fn m(&self) -> usize {
        match self {
            AffiliationModel::Single => 1,
            AffiliationModel::Global { m, .. } | AffiliationModel::Segmented { m, .. } => *m,
        }
    }

    /// Probabilities for trials `1..=m` (index 0 is trial 1).
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        match self {
            AffiliationModel::Single => vec![1.0],
            AffiliationModel::Global { basis, m, coefficients } => {
                let mut p = softmax_probs(&basis.eval(x), coefficients, *m, 0);
                clip_renormalize(&mut p, |_| true);
                p
            }
            AffiliationModel::Segmented { segmentation, basis, m, coefficients } => {
                let seg = segmentation.segment(x);
                let allowed = &segmentation.allowed[seg];
                let mut out = vec![0.0; *m];
                if allowed.len() == 1 {
                    out[allowed[0] - 1] = 1.0;
                    return out;
                }
                let local = softmax_probs(&basis.eval(x), &coefficients[seg], allowed.len(), 0);
                for (s, p) in allowed.iter().zip(local) {
                    out[s - 1] = p;
                }
                clip_renormalize(&mut out, |k| allowed.contains(&(k + 1)));
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffiliationSpec {
    pub basis: Basis,
    #[serde(default)]
    pub segmentation: Option<Segmentation>,
}

pub fn fit_affiliation(data: &StudyDataset, spec: &AffiliationSpec) -> Result<AffiliationModel> {
    let m = data.m();
    if m == 1 {
        return Ok(AffiliationModel::Single);
    }
    spec.basis.check(data.p(), false, "affiliation")?;
    let name = "affiliation model η";
    let sources: Vec<_> = data.source_rows().collect();
    match &spec.segmentation {
        None => {
            let x = spec.basis.design(sources.iter().map(|r| r.x.as_slice()))?;
            let s: Vec<usize> = sources.iter().map(|r| r.trial().unwrap()).collect();
            let fit = multinomial_fit(&x, &s, m, 0).map_err(|e| e.in_nuisance(name))?;
            Ok(AffiliationModel::Global { basis: spec.basis.clone(), m, coefficients: fit.coefficients })
        }
        Some(seg) => {
            seg.validate(m, data.p())?;
            let mut coefficients = Vec::with_capacity(seg.allowed.len());
            for (j, allowed) in seg.allowed.iter().enumerate() {
                let rows: Vec<_> = sources.iter().filter(|r| seg.segment(&r.x) == j).collect();
                let mut local = Vec::with_capacity(rows.len());
                for r in &rows {
                    let s = r.s.unwrap();
                    let k = allowed.iter().position(|a| *a == s).ok_or_else(|| {
                        Error::InvalidData(format!("{name}: trial {s} observed in segment {} where only {allowed:?} enrol", j + 1))
                    })?;
                    local.push(k);
                }
                if allowed.len() == 1 {
                    coefficients.push(Vec::new());
                    continue;
                }
                let x = spec.basis.design(rows.iter().map(|r| r.x.as_slice()))?;
                let fit = multinomial_fit(&x, &local, allowed.len(), 0)
                    .map_err(|e| e.in_nuisance(&format!("{name}, segment {}", j + 1)))?;
                coefficients.push(fit.coefficients);
            }
            Ok(AffiliationModel::Segmented {
                segmentation: seg.clone(),
                basis: spec.basis.clone(),
                m,
                coefficients,
            })
        }
    }
}

/// e(1 | x, s); e(0 | x, s) = 1 − e(1 | x, s).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityModel {
    Known { e1: Vec<f64> },
    Fitted { basis: Basis, coefficients: Vec<Vec<f64>> },
}

impl PropensityModel {
    pub fn e1(&self, x: &[f64], s: usize) -> f64 {
        match self {
            PropensityModel::Known { e1 } => e1[s - 1],
            PropensityModel::Fitted { basis, coefficients } => clip(expit(basis.dot(x, &coefficients[s - 1]))),
        }
    }

    pub fn e(&self, a: u8, x: &[f64], s: usize) -> f64 {
        let e1 = self.e1(x, s);
        if a == 1 {
            e1
        } else {
            1.0 - e1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PropensityKind {
    /// Treatment probability per trial, e.g. known randomization ratios.
    Known(Vec<f64>),
    /// Logistic regression of A on the basis within each trial.
    Fitted(Basis),
}

pub fn fit_propensity(data: &StudyDataset, kind: &PropensityKind) -> Result<PropensityModel> {
    let name = "propensity model e";
    let m = data.m();
    let mut arms = vec![[0usize; 2]; m];
    for r in data.source_rows() {
        arms[r.trial().unwrap()][r.a.unwrap() as usize] += 1;
    }
    if let Some(s) = arms.iter().position(|c| c[0] == 0 || c[1] == 0) {
        return Err(Error::InvalidData(format!("{name}: trial {} has a single arm", s + 1)));
    }
    match kind {
        PropensityKind::Known(e1) => {
            if e1.len() != m {
                return Err(Error::InvalidParameter(format!("{name}: {} values for {m} trials", e1.len())));
            }
            if e1.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                return Err(Error::InvalidParameter(format!("{name}: values must lie in (0,1)")));
            }
            Ok(PropensityModel::Known { e1: e1.clone() })
        }
        PropensityKind::Fitted(basis) => {
            basis.check(data.p(), false, "propensity")?;
            let mut coefficients = Vec::with_capacity(m);
            for s in 1..=m {
                let rows: Vec<_> = data.source_rows().filter(|r| r.s == Some(s)).collect();
                let x = basis.design(rows.iter().map(|r| r.x.as_slice()))?;
                let a: Vec<f64> = rows.iter().map(|r| r.a_f64()).collect();
                let fit = logistic_fit(&x, &a).map_err(|e| e.in_nuisance(&format!("{name}, trial {s}")))?;
                coefficients.push(fit.coefficients);
            }
            Ok(PropensityModel::Fitted { basis: basis.clone(), coefficients })
        }
    }
}

/// Outcome regression with a trial-invariant effect part. In difference
/// mode `Q(a,x,s) = f(x,s) + a·D(x)`; in ratio mode
/// `log Q(a,x,s) = f(x,s) + a·log R(x)`. Because the effect part never sees
/// the trial, the transportability constraint holds exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub mode: Mode,
    pub control: ControlBasis,
    pub effect: Basis,
    pub m: usize,
    pub control_coef: Vec<f64>,
    pub effect_coef: Vec<f64>,
    pub fit: FitResult,
}

impl OutcomeModel {
    /// Linear predictor of the control part, `f(x, s)`.
    pub fn control_predictor(&self, x: &[f64], s: usize) -> f64 {
        self.control.value(x, s, &self.control_coef)
    }

    /// `D(x)` in difference mode, `log R(x)` in ratio mode.
    pub fn effect_predictor(&self, x: &[f64]) -> f64 {
        self.effect.dot(x, &self.effect_coef)
    }

    /// `D(x)` in difference mode, `R(x)` in ratio mode.
    pub fn effect(&self, x: &[f64]) -> f64 {
        match self.mode {
            Mode::Difference => self.effect_predictor(x),
            Mode::Ratio => self.effect_predictor(x).exp(),
        }
    }

    pub fn q(&self, a: u8, x: &[f64], s: usize) -> f64 {
        let f = self.control_predictor(x, s);
        let d = if a == 1 { self.effect_predictor(x) } else { 0.0 };
        match self.mode {
            Mode::Difference => f + d,
            Mode::Ratio => (f + d).exp(),
        }
    }
}

fn outcome_design(data: &StudyDataset, control: &ControlBasis, effect: &Basis) -> Result<(Matrix, Vec<f64>)> {
    let m = data.m();
    let width = control.width(m) + effect.len();
    let mut buf = Vec::with_capacity(width * data.n());
    let mut y = Vec::new();
    for r in data.source_rows() {
        control.eval_into(&r.x, r.s.unwrap(), m, &mut buf);
        let a = r.a_f64();
        buf.extend(effect.terms.iter().map(|t| a * t.eval(&r.x, 0)));
        y.push(r.y.unwrap());
    }
    Ok((Matrix::from_row_major(y.len(), width, buf)?, y))
}

fn outcome_model(data: &StudyDataset, control: &ControlBasis, effect: &Basis, fit: FitResult) -> OutcomeModel {
    let k = control.width(data.m());
    OutcomeModel {
        mode: data.mode(),
        control: control.clone(),
        effect: effect.clone(),
        m: data.m(),
        control_coef: fit.coefficients[..k].to_vec(),
        effect_coef: fit.coefficients[k..].to_vec(),
        fit,
    }
}

fn check_outcome_bases(data: &StudyDataset, control: &ControlBasis, effect: &Basis) -> Result<()> {
    control.terms.check(data.p(), !control.per_trial, "outcome control part")?;
    effect.check(data.p(), false, "outcome effect part")
}

/// Joint least squares of Y on `[control columns | a × effect columns]` over
/// the source rows.
pub fn fit_outcome_difference(data: &StudyDataset, control: &ControlBasis, effect: &Basis) -> Result<OutcomeModel> {
    if data.mode() != Mode::Difference {
        return Err(Error::InvalidParameter("difference outcome model needs difference-mode data".into()));
    }
    check_outcome_bases(data, control, effect)?;
    let (x, y) = outcome_design(data, control, effect)?;
    let fit = ols_fit(&x, &y, None).map_err(|e| e.in_nuisance("outcome model Q"))?;
    Ok(outcome_model(data, control, effect, fit))
}

/// Joint log-link fit with gamma working variance.
pub fn fit_outcome_ratio(data: &StudyDataset, control: &ControlBasis, log_ratio: &Basis) -> Result<OutcomeModel> {
    if data.mode() != Mode::Ratio {
        return Err(Error::InvalidParameter("ratio outcome model needs ratio-mode data".into()));
    }
    check_outcome_bases(data, control, log_ratio)?;
    let (x, y) = outcome_design(data, control, log_ratio)?;
    if y.iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidData("outcome model Q: source outcomes must be positive".into()));
    }
    let fit = loglink_fit(&x, &y, LogLinkFamily::Gamma).map_err(|e| e.in_nuisance("outcome model Q"))?;
    Ok(outcome_model(data, control, log_ratio, fit))
}

/// How the outcome regression is estimated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFit {
    /// One fit over both arms.
    #[default]
    Joint,
    /// Control part on untreated source rows, then the effect part on treated
    /// rows with the control predictor as an offset.
    ControlFirst,
}

fn combine_fits(first: FitResult, second: FitResult) -> FitResult {
    let mut coefficients = first.coefficients;
    coefficients.extend(second.coefficients);
    FitResult {
        coefficients,
        converged: first.converged && second.converged,
        iterations: first.iterations + second.iterations,
        gradient_norm: first.gradient_norm.max(second.gradient_norm),
        objective_trace: second.objective_trace,
    }
}

/// Two-stage outcome fit; see [`OutcomeFit::ControlFirst`].
pub fn fit_outcome_control_first(data: &StudyDataset, control: &ControlBasis, effect: &Basis) -> Result<OutcomeModel> {
    check_outcome_bases(data, control, effect)?;
    let name = "outcome model Q";
    let m = data.m();
    let (mut c0, mut y0, mut e1, mut y1, mut rows1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in data.source_rows() {
        if r.treated() {
            e1.extend(effect.terms.iter().map(|t| t.eval(&r.x, 0)));
            y1.push(r.y.unwrap());
            rows1.push(r);
        } else {
            control.eval_into(&r.x, r.s.unwrap(), m, &mut c0);
            y0.push(r.y.unwrap());
        }
    }
    let x0 = Matrix::from_row_major(y0.len(), control.width(m), c0)?;
    let x1 = Matrix::from_row_major(y1.len(), effect.len(), e1)?;
    let wrap = |e: Error| e.in_nuisance(name);
    let (first, second) = match data.mode() {
        Mode::Difference => {
            let first = ols_fit(&x0, &y0, None).map_err(wrap)?;
            let resid: Vec<f64> = rows1
                .iter()
                .zip(&y1)
                .map(|(r, y)| y - control.value(&r.x, r.s.unwrap(), &first.coefficients))
                .collect();
            let second = ols_fit(&x1, &resid, None).map_err(wrap)?;
            (first, second)
        }
        Mode::Ratio => {
            if y0.iter().chain(&y1).any(|v| *v <= 0.0) {
                return Err(Error::InvalidData(format!("{name}: source outcomes must be positive")));
            }
            let first = loglink_fit(&x0, &y0, LogLinkFamily::Gamma).map_err(wrap)?;
            let offset: Vec<f64> =
                rows1.iter().map(|r| control.value(&r.x, r.s.unwrap(), &first.coefficients)).collect();
            let second = loglink_fit_offset(&x1, &y1, Some(&offset), LogLinkFamily::Gamma).map_err(wrap)?;
            (first, second)
        }
    };
    Ok(outcome_model(data, control, effect, combine_fits(first, second)))
}

/// V(a, x, s) = Var(Y | a, x, s).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceModel {
    /// Mean squared residual within each (trial, arm) cell, `[V0, V1]` per trial.
    Empirical { values: Vec<[f64; 2]> },
    /// `V = Q² / ρ` with a pooled signal-to-noise ratio ρ.
    ConstantSnr { rho: f64, outcome: Box<OutcomeModel> },
    /// Supplied constants, `[V0, V1]` per trial.
    User { values: Vec<[f64; 2]> },
}

impl VarianceModel {
    pub fn constant(m: usize, v: f64) -> Self {
        VarianceModel::User { values: vec![[v, v]; m] }
    }

    pub fn v(&self, a: u8, x: &[f64], s: usize) -> f64 {
        match self {
            VarianceModel::Empirical { values } | VarianceModel::User { values } => values[s - 1][a as usize],
            VarianceModel::ConstantSnr { rho, outcome } => outcome.q(a, x, s).powi(2) / rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum VarianceKind {
    Empirical,
    ConstantSnr,
    User(f64),
}

pub fn fit_variance(data: &StudyDataset, outcome: &OutcomeModel, kind: &VarianceKind) -> Result<VarianceModel> {
    let name = "variance model V";
    let m = data.m();
    match kind {
        VarianceKind::User(v) => {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name}: constant must be positive")));
            }
            Ok(VarianceModel::constant(m, *v))
        }
        VarianceKind::Empirical => {
            let mut sums = vec![[0.0f64; 2]; m];
            let mut counts = vec![[0usize; 2]; m];
            for r in data.source_rows() {
                let (s, a) = (r.s.unwrap(), r.a.unwrap());
                let res = r.y.unwrap() - outcome.q(a, &r.x, s);
                sums[s - 1][a as usize] += res * res;
                counts[s - 1][a as usize] += 1;
            }
            let mut values = vec![[0.0; 2]; m];
            for s in 0..m {
                for a in 0..2 {
                    if counts[s][a] == 0 {
                        return Err(Error::InvalidData(format!("{name}: empty cell (a={a}, s={})", s + 1)));
                    }
                    let v = sums[s][a] / counts[s][a] as f64;
                    if !(v > 0.0) {
                        return Err(Error::Numeric(format!("{name}: zero residual variance in cell (a={a}, s={})", s + 1)));
                    }
                    values[s][a] = v;
                }
            }
            Ok(VarianceModel::Empirical { values })
        }
        VarianceKind::ConstantSnr => {
            if outcome.mode != Mode::Ratio {
                return Err(Error::InvalidParameter(format!("{name}: constant SNR needs a ratio-mode outcome model")));
            }
            let mut acc = 0.0;
            let mut n = 0usize;
            for r in data.source_rows() {
                let q = outcome.q(r.a.unwrap(), &r.x, r.s.unwrap());
                let z = (r.y.unwrap() - q) / q;
                acc += z * z;
                n += 1;
            }
            if !(acc > 0.0) {
                return Err(Error::Numeric(format!("{name}: zero residual variance")));
            }
            Ok(VarianceModel::ConstantSnr {
                rho: n as f64 / acc,
                outcome: Box::new(outcome.clone()),
            })
        }
    }
}

/// Q(x) = E(Y | x, G=1), log-link.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetMeanModel {
    pub basis: Basis,
    pub coefficients: Vec<f64>,
    pub fit: FitResult,
}

impl TargetMeanModel {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.basis.dot(x, &self.coefficients).exp()
    }
}

pub fn fit_target_mean(data: &StudyDataset, basis: &Basis) -> Result<TargetMeanModel> {
    let name = "target mean model Q(x)";
    if data.mode() != Mode::Ratio {
        return Err(Error::InvalidParameter(format!("{name}: needs ratio-mode data")));
    }
    basis.check(data.p(), false, "target mean")?;
    let rows: Vec<_> = data.target_rows().collect();
    let x = basis.design(rows.iter().map(|r| r.x.as_slice()))?;
    let y: Vec<f64> = rows.iter().map(|r| r.y.unwrap()).collect();
    let fit = loglink_fit(&x, &y, LogLinkFamily::Gamma).map_err(|e| e.in_nuisance(name))?;
    Ok(TargetMeanModel { basis: basis.clone(), coefficients: fit.coefficients.clone(), fit })
}
