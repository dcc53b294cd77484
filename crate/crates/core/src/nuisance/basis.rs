//! Named basis expansions used by every regression nuisance.
//!
//! Terms are written as strings in model specs: `1`, `x2`, `x1*x3`, and, for
//! outcome control parts only, `s` and `s*x1` (trial id used as a number).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Term {
    Intercept,
    /// 0-based covariate index.
    X(usize),
    Prod(usize, usize),
    Trial,
    TrialX(usize),
}

impl Term {
    pub fn eval(&self, x: &[f64], s: usize) -> f64 {
        match *self {
            Term::Intercept => 1.0,
            Term::X(j) => x[j],
            Term::Prod(j, k) => x[j] * x[k],
            Term::Trial => s as f64,
            Term::TrialX(j) => s as f64 * x[j],
        }
    }

    fn max_covariate(&self) -> Option<usize> {
        match *self {
            Term::Intercept | Term::Trial => None,
            Term::X(j) | Term::TrialX(j) => Some(j),
            Term::Prod(j, k) => Some(j.max(k)),
        }
    }

    fn uses_trial(&self) -> bool {
        matches!(self, Term::Trial | Term::TrialX(_))
    }
}

fn parse_x(tok: &str) -> Option<usize> {
    let j: usize = tok.strip_prefix('x')?.parse().ok()?;
    (j >= 1).then(|| j - 1)
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(raw: &str) -> Result<Self> {
        let t: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::InvalidParameter(format!("unknown basis term {raw:?}"));
        if t == "1" {
            return Ok(Term::Intercept);
        }
        if t == "s" {
            return Ok(Term::Trial);
        }
        if let Some((l, r)) = t.split_once('*') {
            return match (l, r) {
                ("s", r) => parse_x(r).map(Term::TrialX).ok_or_else(bad),
                (l, "s") => parse_x(l).map(Term::TrialX).ok_or_else(bad),
                (l, r) => match (parse_x(l), parse_x(r)) {
                    (Some(j), Some(k)) => Ok(Term::Prod(j.min(k), j.max(k))),
                    _ => Err(bad()),
                },
            };
        }
        parse_x(&t).map(Term::X).ok_or_else(bad)
    }
}

impl TryFrom<String> for Term {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Term::Intercept => write!(f, "1"),
            Term::X(j) => write!(f, "x{}", j + 1),
            Term::Prod(j, k) => write!(f, "x{}*x{}", j + 1, k + 1),
            Term::Trial => write!(f, "s"),
            Term::TrialX(j) => write!(f, "s*x{}", j + 1),
        }
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Basis {
    pub terms: Vec<Term>,
}

impl Basis {
    pub fn new(terms: Vec<Term>) -> Self {
        Basis { terms }
    }

    pub fn parse(terms: &[&str]) -> Result<Self> {
        Ok(Basis { terms: terms.iter().map(|t| t.parse()).collect::<Result<_>>()? })
    }

    pub fn intercept() -> Self {
        Basis { terms: vec![Term::Intercept] }
    }

    /// `1, x1, ..., xp`.
    pub fn linear(p: usize) -> Self {
        let mut terms = vec![Term::Intercept];
        terms.extend((0..p).map(Term::X));
        Basis { terms }
    }

    /// `1, x_j` for the listed 0-based covariates.
    pub fn linear_in(cols: &[usize]) -> Self {
        let mut terms = vec![Term::Intercept];
        terms.extend(cols.iter().map(|&j| Term::X(j)));
        Basis { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn uses_trial(&self) -> bool {
        self.terms.iter().any(Term::uses_trial)
    }

    /// Rejects empty bases, out-of-range covariates and, unless allowed,
    /// trial terms.
    pub fn check(&self, p: usize, allow_trial: bool, what: &str) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidParameter(format!("{what}: empty basis")));
        }
        for t in &self.terms {
            if t.max_covariate().is_some_and(|j| j >= p) {
                return Err(Error::InvalidParameter(format!("{what}: term {t} but p={p}")));
            }
            if t.uses_trial() && !allow_trial {
                return Err(Error::InvalidParameter(format!("{what}: trial term {t} not allowed here")));
            }
        }
        Ok(())
    }

    pub fn eval_into(&self, x: &[f64], s: usize, out: &mut Vec<f64>) {
        out.extend(self.terms.iter().map(|t| t.eval(x, s)));
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(x, 0)).collect()
    }

    pub fn dot(&self, x: &[f64], coef: &[f64]) -> f64 {
        self.terms.iter().zip(coef).map(|(t, c)| t.eval(x, 0) * c).sum()
    }

    pub fn design<'a, I: IntoIterator<Item = &'a [f64]>>(&self, xs: I) -> Result<Matrix> {
        let mut data = Vec::new();
        let mut n = 0;
        for x in xs {
            self.eval_into(x, 0, &mut data);
            n += 1;
        }
        Matrix::from_row_major(n, self.len(), data)
    }
}

/// The trial-specific part of an outcome regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBasis {
    pub terms: Basis,
    /// One copy of `terms` per trial (interacted with trial indicators);
    /// otherwise a single shared copy, where `s` terms carry trial dependence.
    #[serde(default = "yes")]
    pub per_trial: bool,
}

fn yes() -> bool {
    true
}

impl ControlBasis {
    pub fn per_trial(terms: Basis) -> Self {
        ControlBasis { terms, per_trial: true }
    }

    pub fn shared(terms: Basis) -> Self {
        ControlBasis { terms, per_trial: false }
    }

    pub fn width(&self, m: usize) -> usize {
        if self.per_trial {
            self.terms.len() * m
        } else {
            self.terms.len()
        }
    }

    /// Columns for a row of trial `s` (1-based).
    pub fn eval_into(&self, x: &[f64], s: usize, m: usize, out: &mut Vec<f64>) {
        if self.per_trial {
            let k = self.terms.len();
            let start = out.len();
            out.resize(start + k * m, 0.0);
            for (j, t) in self.terms.terms.iter().enumerate() {
                out[start + (s - 1) * k + j] = t.eval(x, s);
            }
        } else {
            self.terms.eval_into(x, s, out);
        }
    }

    pub fn value(&self, x: &[f64], s: usize, coef: &[f64]) -> f64 {
        let k = self.terms.len();
        let block = if self.per_trial { &coef[(s - 1) * k..s * k] } else { &coef[..k] };
        self.terms.terms.iter().zip(block).map(|(t, c)| t.eval(x, s) * c).sum()
    }
}
