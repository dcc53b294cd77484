//! Result types shared by the estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::nuisance::{NuisanceStatus, TrialWeights};

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Two-sided normal critical value for a confidence level in (0,1).
pub fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence level {level} outside (0,1)")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `sqrt(Pn φ² / n)`.
pub(crate) fn if_se(phi: &[f64]) -> f64 {
    let n = phi.len() as f64;
    (phi.iter().map(|p| p * p).sum::<f64>() / n / n).sqrt()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub capped: usize,
}

impl WeightSummary {
    pub fn of(w: &TrialWeights, eligible: impl Fn(usize, usize) -> bool) -> Self {
        let mut vals = Vec::new();
        for (i, row) in w.w.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                if eligible(i, k) {
                    vals.push(*v);
                }
            }
        }
        if vals.is_empty() {
            return WeightSummary { capped: w.capped, ..Default::default() };
        }
        WeightSummary {
            min: vals.iter().cloned().fold(f64::INFINITY, f64::min),
            max: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean: mean(&vals),
            capped: w.capped,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// |Pn φ̂| at the reported estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ee_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSummary>,
    /// Source rows whose own trial is outside the estimated support and
    /// therefore contribute no augmentation.
    pub unsupported_rows: usize,
    pub pi_clipped: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub nuisance_status: Vec<NuisanceStatus>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub psi_hat: f64,
    /// Absent for plug-in estimators without a variance estimate.
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub ci_level: f64,
    pub if_values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    pub(crate) fn plug_in(estimator: &str, psi_hat: f64, diagnostics: Diagnostics) -> Self {
        EstimateReport {
            estimator: estimator.to_string(),
            psi_hat,
            se: None,
            ci: None,
            ci_level: DEFAULT_LEVEL,
            if_values: Vec::new(),
            diagnostics,
        }
    }

    pub(crate) fn with_if(estimator: &str, psi_hat: f64, phi: Vec<f64>, diagnostics: Diagnostics) -> Self {
        let se = if_se(&phi);
        let mut r = EstimateReport {
            estimator: estimator.to_string(),
            psi_hat,
            se: Some(se),
            ci: None,
            ci_level: DEFAULT_LEVEL,
            if_values: phi,
            diagnostics,
        };
        r.set_level(DEFAULT_LEVEL).expect("default level is valid");
        r
    }

    /// Recompute the interval at another confidence level.
    pub fn set_level(&mut self, level: f64) -> Result<()> {
        let z = z_value(level)?;
        self.ci_level = level;
        self.ci = self.se.map(|se| (self.psi_hat - z * se, self.psi_hat + z * se));
        Ok(())
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo <= truth && truth <= hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_95() {
        assert!((z_value(0.95).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!(z_value(1.0).is_err());
    }

    #[test]
    fn ci_symmetric() {
        let r = EstimateReport::with_if("t", 1.0, vec![1.0, -1.0, 2.0, -2.0], Diagnostics::default());
        let (lo, hi) = r.ci.unwrap();
        assert!((1.0 - lo - (hi - 1.0)).abs() < 1e-15);
        assert!((r.se.unwrap() - (10.0f64 / 4.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
