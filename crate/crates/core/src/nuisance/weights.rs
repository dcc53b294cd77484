//! Trial weight functions and their η-normalized form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights above this are clipped (and reported by the caller).
pub const WEIGHT_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightChoice {
    Optimal,
    Constant,
    /// Arm multipliers on the variance terms: `{λ1·V1/e1 + λ0·V0/e0}⁻¹`.
    Custom { lambda1: f64, lambda0: f64 },
}

impl WeightChoice {
    fn multipliers(&self) -> Option<(f64, f64)> {
        match *self {
            WeightChoice::Optimal => Some((1.0, 1.0)),
            WeightChoice::Constant => None,
            WeightChoice::Custom { lambda1, lambda0 } => Some((lambda1, lambda0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let WeightChoice::Custom { lambda1, lambda0 } = *self {
            if !(lambda1 >= 0.0 && lambda0 >= 0.0 && lambda1 + lambda0 > 0.0) || !(lambda1 + lambda0).is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "custom weight multipliers must be nonnegative and not both zero (got {lambda1}, {lambda0})"
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for WeightChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "optimal" => Ok(WeightChoice::Optimal),
            "constant" => Ok(WeightChoice::Constant),
            other => {
                let bad = || Error::InvalidParameter(format!("weights must be optimal, constant or custom:l1,l0 (got {other:?})"));
                let rest = other.strip_prefix("custom:").ok_or_else(bad)?;
                let (l1, l0) = rest.split_once(',').ok_or_else(bad)?;
                let choice = WeightChoice::Custom {
                    lambda1: l1.trim().parse().map_err(|_| bad())?,
                    lambda0: l0.trim().parse().map_err(|_| bad())?,
                };
                choice.validate()?;
                Ok(choice)
            }
        }
    }
}

impl fmt::Display for WeightChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightChoice::Optimal => write!(f, "optimal"),
            WeightChoice::Constant => write!(f, "constant"),
            WeightChoice::Custom { lambda1, lambda0 } => write!(f, "custom:{lambda1},{lambda0}"),
        }
    }
}

fn check_inputs(v0: f64, v1: f64, e1: f64) -> Result<()> {
    if !(v0 > 0.0 && v1 > 0.0 && v0.is_finite() && v1.is_finite()) {
        return Err(Error::InvalidParameter(format!("variance out of range (V0={v0}, V1={v1})")));
    }
    if !(e1 > 0.0 && e1 < 1.0) {
        return Err(Error::InvalidParameter(format!("propensity out of range (e1={e1})")));
    }
    Ok(())
}

fn invert(total: f64) -> f64 {
    let w = 1.0 / total;
    if w > WEIGHT_CAP || !w.is_finite() {
        WEIGHT_CAP
    } else {
        w
    }
}

/// `{λ1·V1/e1 + λ0·V0/e0}⁻¹`, or 1 for constant weights.
pub fn weight_difference(v0: f64, v1: f64, e1: f64, choice: &WeightChoice) -> Result<f64> {
    let Some((l1, l0)) = choice.multipliers() else {
        return Ok(1.0);
    };
    check_inputs(v0, v1, e1)?;
    Ok(invert(l1 * v1 / e1 + l0 * v0 / (1.0 - e1)))
}

/// `[λ1·V1/{e1·Q1²} + λ0·V0/{e0·Q0²}]⁻¹`, or 1 for constant weights.
pub fn weight_ratio(v0: f64, v1: f64, e1: f64, q0: f64, q1: f64, choice: &WeightChoice) -> Result<f64> {
    let Some((l1, l0)) = choice.multipliers() else {
        return Ok(1.0);
    };
    check_inputs(v0, v1, e1)?;
    if !(q0 > 0.0 && q1 > 0.0) {
        return Err(Error::InvalidParameter(format!("outcome means must be positive (Q0={q0}, Q1={q1})")));
    }
    Ok(invert(l1 * v1 / (e1 * q1 * q1) + l0 * v0 / ((1.0 - e1) * q0 * q0)))
}

/// `w(x,s) / Σ_s' η(s'|x)·w(x,s')` for every trial at one x.
pub fn normalized_weight(w: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    let denom: f64 = w.iter().zip(eta).map(|(w, e)| w * e).sum();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Numeric(format!("normalized weight denominator is {denom}")));
    }
    Ok(w.iter().map(|w| w / denom).collect())
}
