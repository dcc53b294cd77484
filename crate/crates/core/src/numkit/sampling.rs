//! Reproducible random streams.
//!
//! A stream is identified by `(seed, stream_id)`; the same pair always
//! produces the same draws. Monte Carlo replications use the replication index
//! as the stream id so results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::linalg::{Cholesky, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    MvNormal { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Bernoulli { p: f64 },
    Multinomial { probs: Vec<f64> },
    Gamma { shape: f64, scale: f64 },
    Normal { mean: f64, var: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Draws {
    Vectors(Vec<Vec<f64>>),
    Scalars(Vec<f64>),
    Categories(Vec<usize>),
}

pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index drawn from `probs` (assumed validated).
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
    }

    pub fn gamma(&mut self, gamma: &Gamma<f64>) -> f64 {
        gamma.sample(&mut self.rng)
    }

    /// `mean + L z` for a precomputed Cholesky factor `L`.
    pub fn mvnormal(&mut self, mean: &[f64], chol: &Cholesky) -> Vec<f64> {
        let z: Vec<f64> = (0..mean.len()).map(|_| self.standard_normal()).collect();
        let l = chol.lower();
        (0..mean.len())
            .map(|i| mean[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
            .collect()
    }

    pub fn sample(&mut self, dist: &Dist, n: usize) -> Result<Draws> {
        match dist {
            Dist::MvNormal { mean, cov } => {
                let cov = Matrix::from_rows(cov)?;
                if cov.rows() != mean.len() || cov.cols() != mean.len() {
                    return Err(Error::InvalidParameter("mvnormal: dimension mismatch".into()));
                }
                if !cov.is_symmetric(1e-12) {
                    return Err(Error::InvalidParameter("mvnormal: covariance not symmetric".into()));
                }
                let chol = Cholesky::new(&cov)
                    .map_err(|_| Error::InvalidParameter("mvnormal: covariance not SPD".into()))?;
                Ok(Draws::Vectors((0..n).map(|_| self.mvnormal(mean, &chol)).collect()))
            }
            Dist::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidParameter(format!("bernoulli p={p} outside [0,1]")));
                }
                Ok(Draws::Scalars(
                    (0..n).map(|_| if self.bernoulli(*p) { 1.0 } else { 0.0 }).collect(),
                ))
            }
            Dist::Multinomial { probs } => {
                let total: f64 = probs.iter().sum();
                if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(
                        "multinomial probabilities must be nonnegative and sum to 1".into(),
                    ));
                }
                Ok(Draws::Categories((0..n).map(|_| self.categorical(probs)).collect()))
            }
            Dist::Gamma { shape, scale } => {
                if !(*shape > 0.0 && *scale > 0.0) {
                    return Err(Error::InvalidParameter("gamma shape and scale must be > 0".into()));
                }
                let g = Gamma::new(*shape, *scale)
                    .map_err(|e| Error::InvalidParameter(format!("gamma: {e}")))?;
                Ok(Draws::Scalars((0..n).map(|_| self.gamma(&g)).collect()))
            }
            Dist::Normal { mean, var } => {
                if !(*var >= 0.0) {
                    return Err(Error::InvalidParameter("normal variance must be >= 0".into()));
                }
                let sd = var.sqrt();
                Ok(Draws::Scalars((0..n).map(|_| self.normal(*mean, sd)).collect()))
            }
        }
    }
}
