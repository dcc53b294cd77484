//! Scenario configuration, replication loop and Monte Carlo summaries.

use serde::{Deserialize, Serialize};

use super::dgp::{gen_dataset, DgpSpec};
use super::exec::Execution;
use super::oracle::{oracle_truth, ORACLE_DRAWS};
use crate::ate::{eif_ate, eif_ate_variant, gformula_ate, ipw_ate, psi_sp_d, solve_beta_d, Variant};
use crate::cmr::{cmr_estimate, cmr_variant, gformula_cmr, psi_sp_r, solve_beta_r};
use crate::data::{Mode, StudyDataset, DEFAULT_SUPPORT_TAU};
use crate::error::{Error, Result};
use crate::nuisance::{
    fit_nuisances, AffiliationSpec, Basis, ControlBasis, ModelSpec, OutcomeFit, OutcomeSpec, PropensityKind, Term, VarianceKind,
    WeightChoice,
};

/// Which nuisances use their deliberately wrong working model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Misspec {
    /// Q(a,x,s): shared control with no trial-by-covariate freedom and a
    /// constant effect.
    pub outcome: bool,
    /// e: fixed at 0.5.
    pub propensity: bool,
    /// η: one global multinomial ignoring the enrolment thresholds.
    pub affiliation: bool,
    /// π: logistic in x₁ only.
    pub selection: bool,
    /// V: constant 1 in both arms of every trial.
    pub variance: bool,
    /// Q(x): intercept only.
    pub target_mean: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    Gformula,
    Ipw,
    Eif,
    EifPooled,
    EifArmwise,
    Cmr,
    CmrPooled,
    CmrArmwise,
    /// Plug-in from the parametric CATE solved on its efficient score.
    PsiSpD,
    /// Plug-in from the parametric ratio solved on its efficient score.
    PsiSpR,
}

impl EstimatorId {
    pub fn mode(&self) -> Option<Mode> {
        use EstimatorId::*;
        match self {
            Gformula => None,
            Ipw | Eif | EifPooled | EifArmwise | PsiSpD => Some(Mode::Difference),
            Cmr | CmrPooled | CmrArmwise | PsiSpR => Some(Mode::Ratio),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub label: String,
    pub dgp: DgpSpec,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub misspec: Misspec,
    pub weights: WeightChoice,
    pub estimator: EstimatorId,
    /// Draws for the ground truth; defaults to [`ORACLE_DRAWS`].
    #[serde(default)]
    pub oracle_draws: Option<usize>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.weights.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidParameter(format!("{}: reps must be at least 1", self.label)));
        }
        if self.n < 10 {
            return Err(Error::InvalidParameter(format!("{}: n={} is too small", self.label, self.n)));
        }
        if let Some(m) = self.estimator.mode() {
            if m != self.dgp.mode() {
                return Err(Error::InvalidParameter(format!(
                    "{}: estimator {:?} does not fit a {:?} dgp",
                    self.label,
                    self.estimator,
                    self.dgp.mode()
                )));
            }
        }
        if self.misspec.target_mean && self.dgp.mode() == Mode::Difference {
            return Err(Error::InvalidParameter(format!("{}: no target mean in difference mode", self.label)));
        }
        Ok(())
    }

    /// Nuisance models implied by the misspecification flags.
    pub fn model_spec(&self) -> ModelSpec {
        scenario_model_spec(&self.dgp, &self.misspec)
    }
}

fn correct_outcome(p: usize) -> OutcomeSpec {
    OutcomeSpec::new(ControlBasis::per_trial(Basis::linear(p)), Basis::linear(p))
}

/// Shared control slopes and a constant effect. On the ratio scale the
/// control part is fitted on untreated rows alone.
fn wrong_outcome(mode: Mode, p: usize) -> OutcomeSpec {
    let mut terms = vec![Term::Intercept, Term::Trial];
    terms.extend((0..p).map(Term::X));
    let mut spec = OutcomeSpec::new(ControlBasis::shared(Basis::new(terms.clone())), Basis::intercept());
    match mode {
        Mode::Difference => {
            terms.extend((0..p).map(Term::TrialX));
            spec.control = ControlBasis::shared(Basis::new(terms));
        }
        Mode::Ratio => spec.fit = OutcomeFit::ControlFirst,
    }
    spec
}

pub fn scenario_model_spec(dgp: &DgpSpec, mis: &Misspec) -> ModelSpec {
    let (mode, p, m) = (dgp.mode(), dgp.p(), dgp.m());
    let lin = Basis::linear(p);
    let outcome = if mis.outcome { wrong_outcome(mode, p) } else { correct_outcome(p) };
    ModelSpec {
        selection: if mis.selection { Basis::linear_in(&[0]) } else { lin.clone() },
        affiliation: AffiliationSpec {
            basis: lin.clone(),
            segmentation: (!mis.affiliation).then(|| dgp.segmentation()),
        },
        propensity: if mis.propensity {
            PropensityKind::Known(vec![0.5; m])
        } else {
            PropensityKind::Fitted(Basis::intercept())
        },
        // A correct variance model needs correct residuals.
        variance_outcome: (mis.outcome && !mis.variance).then(|| correct_outcome(p)),
        variance: match (mode, mis.variance) {
            (Mode::Difference, false) => VarianceKind::Empirical,
            (_, true) => VarianceKind::User(1.0),
            (Mode::Ratio, false) => VarianceKind::ConstantSnr,
        },
        target_mean: (mode == Mode::Ratio).then(|| if mis.target_mean { Basis::intercept() } else { lin }),
        outcome,
        support_tau: DEFAULT_SUPPORT_TAU,
    }
}

/// Start for the parametric solvers: effect coefficients of the fitted
/// outcome model, matched term by term onto the linear basis.
fn start_from(effect: &Basis, coef: &[f64], target: &Basis) -> Vec<f64> {
    target
        .terms
        .iter()
        .map(|t| effect.terms.iter().position(|u| u == t).map_or(0.0, |k| coef[k]))
        .collect()
}

/// One replication's estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub psi_hat: f64,
    pub se: Option<f64>,
    pub covered: Option<bool>,
}

/// Fits the scenario's nuisances on `data` and applies its estimator.
pub fn estimate_once(cfg: &ScenarioConfig, data: &StudyDataset, truth: f64) -> Result<(f64, Option<f64>, Option<bool>)> {
    let spec = cfg.model_spec();
    let fitted = fit_nuisances(data, &spec)?;
    let table = fitted.evaluate(data)?;
    let lin = Basis::linear(data.p());
    let start = || start_from(&fitted.outcome.effect, &fitted.outcome.effect_coef, &lin);
    let ate = |r: crate::report::EstimateReport| (r.psi_hat, r.se, r.covers(truth));
    let cmr = |r: crate::cmr::RatioEstimate| (r.psi_hat, r.se, r.covers(truth));
    use EstimatorId::*;
    Ok(match (cfg.estimator, data.mode()) {
        (Gformula, Mode::Difference) => ate(gformula_ate(data, &table)?),
        (Gformula, Mode::Ratio) => cmr(gformula_cmr(data, &table)?),
        (Ipw, _) => ate(ipw_ate(data, &table, None)?),
        (Eif, _) => ate(eif_ate(data, &table, &cfg.weights)?),
        (EifPooled, _) => ate(eif_ate_variant(data, &table, Variant::Pooled)?),
        (EifArmwise, _) => ate(eif_ate_variant(data, &table, Variant::Armwise)?),
        (Cmr, _) => cmr(cmr_estimate(data, &table, &cfg.weights)?),
        (CmrPooled, _) => cmr(cmr_variant(data, &table, Variant::Pooled)?),
        (CmrArmwise, _) => cmr(cmr_variant(data, &table, Variant::Armwise)?),
        (PsiSpD, _) => ate(psi_sp_d(data, &solve_beta_d(data, &table, &lin, &start())?)?),
        (PsiSpR, _) => cmr(psi_sp_r(data, &solve_beta_r(data, &table, &lin, &start())?)?),
    })
}

/// Monte Carlo summary of one scenario cell. `bias` is in units of 10⁻²;
/// everything else is on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Monte Carlo variance of ψ̂ (divisor = number of successful reps).
    pub variance: f64,
    pub se_mean: Option<f64>,
    /// Percent of intervals covering the truth.
    pub coverage: Option<f64>,
}

impl SummaryRow {
    pub fn from_records(label: &str, n: usize, truth: f64, records: &[RepRecord], failures: usize) -> Self {
        let k = records.len() as f64;
        let mean = records.iter().map(|r| r.psi_hat).sum::<f64>() / k;
        let mse = records.iter().map(|r| (r.psi_hat - truth).powi(2)).sum::<f64>() / k;
        let variance = records.iter().map(|r| (r.psi_hat - mean).powi(2)).sum::<f64>() / k;
        let ses: Vec<f64> = records.iter().filter_map(|r| r.se).collect();
        let cov: Vec<bool> = records.iter().filter_map(|r| r.covered).collect();
        SummaryRow {
            label: label.to_string(),
            n,
            reps: records.len(),
            failures,
            truth,
            mean,
            bias: (mean - truth) * 100.0,
            rmse: mse.sqrt(),
            variance,
            se_mean: (!ses.is_empty()).then(|| ses.iter().sum::<f64>() / ses.len() as f64),
            coverage: (!cov.is_empty()).then(|| 100.0 * cov.iter().filter(|c| **c).count() as f64 / cov.len() as f64),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub summary: SummaryRow,
    pub records: Vec<RepRecord>,
    /// `(rep, message)` for replications whose estimator failed.
    pub failures: Vec<(usize, String)>,
}

/// Runs every replication of a scenario. Replication `r` draws from stream
/// `(seed, r)`, so the result does not depend on `exec`.
pub fn run_scenario(cfg: &ScenarioConfig, exec: Execution) -> Result<ScenarioResult> {
    cfg.validate()?;
    let truth = oracle_truth(&cfg.dgp, cfg.oracle_draws.unwrap_or(ORACLE_DRAWS), 0, exec)?.value;
    let outcomes = exec.map(cfg.reps, |rep| {
        gen_dataset(&cfg.dgp, cfg.n, cfg.seed, rep as u64).and_then(|d| estimate_once(cfg, &d, truth))
    })?;
    let mut records = Vec::with_capacity(cfg.reps);
    let mut failures = Vec::new();
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok((psi_hat, se, covered)) if psi_hat.is_finite() => records.push(RepRecord { rep, psi_hat, se, covered }),
            Ok((psi_hat, ..)) => failures.push((rep, format!("non-finite estimate {psi_hat}"))),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    for (rep, msg) in &failures {
        log::warn!("{} rep {rep}: {msg}", cfg.label);
    }
    Ok(ScenarioResult {
        summary: SummaryRow::from_records(&cfg.label, cfg.n, truth, &records, failures.len()),
        records,
        failures,
    })
}
