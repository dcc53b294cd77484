//! Model specs, the fitted nuisance bundle, and its row-wise evaluation.

use serde::{Deserialize, Serialize};

use super::basis::{Basis, ControlBasis};
use super::models::*;
use super::weights::{normalized_weight, weight_difference, weight_ratio, WeightChoice, WEIGHT_CAP};
use crate::data::{Mode, StudyDataset, DEFAULT_SUPPORT_TAU};
use crate::error::{Error, Result};
use crate::numkit::FitResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub control: ControlBasis,
    /// D(x) in difference mode, log R(x) in ratio mode.
    pub effect: Basis,
    #[serde(default)]
    pub fit: OutcomeFit,
}

impl OutcomeSpec {
    pub fn new(control: ControlBasis, effect: Basis) -> Self {
        OutcomeSpec { control, effect, fit: OutcomeFit::Joint }
    }

    pub fn fit(&self, data: &StudyDataset) -> Result<OutcomeModel> {
        match (self.fit, data.mode()) {
            (OutcomeFit::ControlFirst, _) => fit_outcome_control_first(data, &self.control, &self.effect),
            (OutcomeFit::Joint, Mode::Difference) => fit_outcome_difference(data, &self.control, &self.effect),
            (OutcomeFit::Joint, Mode::Ratio) => fit_outcome_ratio(data, &self.control, &self.effect),
        }
    }
}

fn default_tau() -> f64 {
    DEFAULT_SUPPORT_TAU
}

/// Which nuisance models to fit. Serialized as the JSON model-spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub selection: Basis,
    pub affiliation: AffiliationSpec,
    pub propensity: PropensityKind,
    pub outcome: OutcomeSpec,
    /// Outcome model whose residuals feed the variance model; defaults to
    /// `outcome`.
    #[serde(default)]
    pub variance_outcome: Option<OutcomeSpec>,
    pub variance: VarianceKind,
    /// Target outcome mean Q(x); ratio mode only.
    #[serde(default)]
    pub target_mean: Option<Basis>,
    #[serde(default = "default_tau")]
    pub support_tau: f64,
}

impl ModelSpec {
    /// Main-effects bases everywhere, per-trial control intercepts and slopes.
    pub fn linear(mode: Mode, p: usize) -> Self {
        let lin = Basis::linear(p);
        ModelSpec {
            selection: lin.clone(),
            affiliation: AffiliationSpec { basis: lin.clone(), segmentation: None },
            propensity: PropensityKind::Fitted(Basis::intercept()),
            outcome: OutcomeSpec::new(ControlBasis::per_trial(lin.clone()), lin.clone()),
            variance_outcome: None,
            variance: match mode {
                Mode::Difference => VarianceKind::Empirical,
                Mode::Ratio => VarianceKind::ConstantSnr,
            },
            target_mean: (mode == Mode::Ratio).then_some(lin),
            support_tau: DEFAULT_SUPPORT_TAU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceStatus {
    pub name: String,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl NuisanceStatus {
    fn from_fit(name: &str, fit: &FitResult) -> Self {
        NuisanceStatus {
            name: name.to_string(),
            converged: fit.converged,
            iterations: fit.iterations,
            gradient_norm: fit.gradient_norm,
        }
    }
}

/// All fitted nuisances for one dataset. Immutable once built.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedNuisances {
    pub selection: SelectionModel,
    pub affiliation: AffiliationModel,
    pub propensity: PropensityModel,
    pub outcome: OutcomeModel,
    pub variance: VarianceModel,
    pub target_mean: Option<TargetMeanModel>,
    pub support_tau: f64,
    pub status: Vec<NuisanceStatus>,
}

pub fn fit_nuisances(data: &StudyDataset, spec: &ModelSpec) -> Result<FittedNuisances> {
    if !(spec.support_tau >= 0.0 && spec.support_tau < 1.0) {
        return Err(Error::InvalidParameter(format!("support threshold {} outside [0,1)", spec.support_tau)));
    }
    let selection = fit_selection(data, &spec.selection)?;
    let affiliation = fit_affiliation(data, &spec.affiliation)?;
    let propensity = fit_propensity(data, &spec.propensity)?;
    let outcome = spec.outcome.fit(data)?;
    let variance = match &spec.variance_outcome {
        Some(aux) => fit_variance(data, &aux.fit(data)?, &spec.variance)?,
        None => fit_variance(data, &outcome, &spec.variance)?,
    };
    let target_mean = match (data.mode(), &spec.target_mean) {
        (Mode::Ratio, Some(b)) => Some(fit_target_mean(data, b)?),
        (Mode::Ratio, None) => {
            return Err(Error::InvalidParameter("ratio mode needs a target mean model".into()));
        }
        (Mode::Difference, _) => None,
    };
    let mut status = vec![
        NuisanceStatus::from_fit("selection", &selection.fit),
        NuisanceStatus::from_fit("outcome", &outcome.fit),
    ];
    if let Some(t) = &target_mean {
        status.push(NuisanceStatus::from_fit("target_mean", &t.fit));
    }
    Ok(FittedNuisances {
        selection,
        affiliation,
        propensity,
        outcome,
        variance,
        target_mean,
        support_tau: spec.support_tau,
        status,
    })
}

impl FittedNuisances {
    pub fn evaluate(&self, data: &StudyDataset) -> Result<NuisanceTable> {
        let m = data.m();
        if self.affiliation.m() != m || self.outcome.m != m {
            return Err(Error::InvalidParameter(format!("nuisances fitted for a different number of trials than {m}")));
        }
        let n = data.n();
        let mut t = NuisanceTable::empty(data.mode(), m, n, self.support_tau);
        for r in data.rows() {
            let x = r.x.as_slice();
            t.pi.push(self.selection.prob(x));
            if self.selection.clipped(x) {
                t.pi_clipped += 1;
            }
            t.eta.push(self.affiliation.probs(x));
            t.e1.push((1..=m).map(|s| self.propensity.e1(x, s)).collect());
            t.q0.push((1..=m).map(|s| self.outcome.q(0, x, s)).collect());
            t.effect.push(self.outcome.effect(x));
            t.v0.push((1..=m).map(|s| self.variance.v(0, x, s)).collect());
            t.v1.push((1..=m).map(|s| self.variance.v(1, x, s)).collect());
        }
        t.target_q = self.target_mean.as_ref().map(|tm| data.rows().iter().map(|r| tm.value(&r.x)).collect());
        t.status = self.status.clone();
        Ok(t)
    }
}

/// Every nuisance evaluated at every row's covariates (and every trial).
/// Estimators consume this table, so true nuisance functions can be
/// injected directly.
#[derive(Debug, Clone)]
pub struct NuisanceTable {
    pub mode: Mode,
    pub m: usize,
    pub pi: Vec<f64>,
    /// Rows whose π̂ hit the clip bounds.
    pub pi_clipped: usize,
    pub eta: Vec<Vec<f64>>,
    /// e(1 | x, s).
    pub e1: Vec<Vec<f64>>,
    pub q0: Vec<Vec<f64>>,
    /// D(x) in difference mode, R(x) in ratio mode.
    pub effect: Vec<f64>,
    pub v0: Vec<Vec<f64>>,
    pub v1: Vec<Vec<f64>>,
    /// Q(x), ratio mode only.
    pub target_q: Option<Vec<f64>>,
    pub support_tau: f64,
    pub status: Vec<NuisanceStatus>,
}

/// Trial weights per row, with the number of entries that hit the cap.
#[derive(Debug, Clone)]
pub struct TrialWeights {
    pub w: Vec<Vec<f64>>,
    pub capped: usize,
}

impl NuisanceTable {
    pub fn empty(mode: Mode, m: usize, n: usize, support_tau: f64) -> Self {
        NuisanceTable {
            mode,
            m,
            pi: Vec::with_capacity(n),
            pi_clipped: 0,
            eta: Vec::with_capacity(n),
            e1: Vec::with_capacity(n),
            q0: Vec::with_capacity(n),
            effect: Vec::with_capacity(n),
            v0: Vec::with_capacity(n),
            v1: Vec::with_capacity(n),
            target_q: None,
            support_tau,
            status: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }

    /// Shape and range checks against a dataset.
    pub fn check(&self, data: &StudyDataset) -> Result<()> {
        let n = data.n();
        let rows_ok = [&self.eta, &self.e1, &self.q0, &self.v0, &self.v1]
            .iter()
            .all(|t| t.len() == n && t.iter().all(|r| r.len() == self.m));
        if self.pi.len() != n || self.effect.len() != n || !rows_ok || self.m != data.m() || self.mode != data.mode() {
            return Err(Error::InvalidParameter("nuisance table does not match the dataset".into()));
        }
        if self.pi.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Numeric("selection probability outside (0,1)".into()));
        }
        if self.mode == Mode::Ratio {
            match &self.target_q {
                Some(q) if q.len() == n => {}
                _ => return Err(Error::InvalidParameter("ratio mode needs target mean values".into())),
            }
        }
        Ok(())
    }

    pub fn q1(&self, i: usize, k: usize) -> f64 {
        match self.mode {
            Mode::Difference => self.q0[i][k] + self.effect[i],
            Mode::Ratio => self.q0[i][k] * self.effect[i],
        }
    }

    pub fn q(&self, a: u8, i: usize, k: usize) -> f64 {
        if a == 1 {
            self.q1(i, k)
        } else {
            self.q0[i][k]
        }
    }

    pub fn e(&self, a: u8, i: usize, k: usize) -> f64 {
        if a == 1 {
            self.e1[i][k]
        } else {
            1.0 - self.e1[i][k]
        }
    }

    pub fn v(&self, a: u8, i: usize, k: usize) -> f64 {
        if a == 1 {
            self.v1[i][k]
        } else {
            self.v0[i][k]
        }
    }

    pub fn supported(&self, i: usize, k: usize) -> bool {
        self.eta[i][k] > self.support_tau
    }

    pub fn weights(&self, choice: &WeightChoice) -> Result<TrialWeights> {
        choice.validate()?;
        let mut capped = 0;
        let mut w = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let mut row = Vec::with_capacity(self.m);
            for k in 0..self.m {
                let wk = match self.mode {
                    Mode::Difference => weight_difference(self.v0[i][k], self.v1[i][k], self.e1[i][k], choice),
                    Mode::Ratio => {
                        weight_ratio(self.v0[i][k], self.v1[i][k], self.e1[i][k], self.q0[i][k], self.q1(i, k), choice)
                    }
                }
                .map_err(|e| e.in_nuisance(&format!("trial weight (row {}, trial {})", i + 1, k + 1)))?;
                if wk >= WEIGHT_CAP {
                    capped += 1;
                }
                row.push(wk);
            }
            w.push(row);
        }
        if capped > 0 {
            log::warn!("{capped} trial weights clipped at {WEIGHT_CAP:e}");
        }
        Ok(TrialWeights { w, capped })
    }

    /// h(x, s) = w / Σ η·w for every row and trial.
    pub fn normalized(&self, w: &TrialWeights) -> Result<Vec<Vec<f64>>> {
        w.w.iter()
            .zip(&self.eta)
            .enumerate()
            .map(|(i, (wr, er))| {
                normalized_weight(wr, er).map_err(|e| Error::Numeric(format!("row {}: {e}", i + 1)))
            })
            .collect()
    }
}
