//! Gaussian mixtures with full covariances, and their closed-form
//! perturbation under the variance-preserving forward diffusion.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::rng::{RngStream, StreamTag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("mixture needs at least one component")]
    Empty,
    #[error("component {0}: weight must be positive and finite")]
    BadWeight(usize),
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("component {component}: expected dimension {expected}, got {got}")]
    Dimension {
        component: usize,
        expected: usize,
        got: usize,
    },
    #[error("component {0}: covariance is not symmetric positive definite")]
    NotSpd(usize),
}

/// Lower Cholesky factor of a row-major `d x d` matrix, or `None` if not SPD.
pub(crate) fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves `L y = b` in place.
fn forward_sub(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

/// Solves `L^T y = b` in place.
fn backward_sub(l: &[f64], d: usize, b: &mut [f64]) {
    for i in (0..d).rev() {
        let mut s = b[i];
        for k in i + 1..d {
            s -= l[k * d + i] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major `d x d` covariance per component.
    covariances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<f64>>,
    ) -> Result<Self, MixtureError> {
        let gm = Self {
            weights,
            means,
            covariances,
        };
        gm.validate()?;
        Ok(gm)
    }

    pub fn isotropic(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        std: f64,
    ) -> Result<Self, MixtureError> {
        let d = means.first().map_or(0, Vec::len);
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = std * std;
        }
        let covs = vec![cov; means.len()];
        Self::new(weights, means, covs)
    }

    /// `N(0, I)` in `d` dimensions.
    pub fn standard_normal(d: usize) -> Self {
        Self::isotropic(vec![1.0], vec![vec![0.0; d]], 1.0).expect("valid")
    }

    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.weights.is_empty() {
            return Err(MixtureError::Empty);
        }
        let d = self.means[0].len();
        if self.means.len() != self.weights.len() || self.covariances.len() != self.weights.len() {
            return Err(MixtureError::Dimension {
                component: self.means.len().min(self.covariances.len()),
                expected: self.weights.len(),
                got: self.means.len().min(self.covariances.len()),
            });
        }
        let mut total = 0.0;
        for (k, &w) in self.weights.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(MixtureError::BadWeight(k));
            }
            total += w;
            if self.means[k].len() != d || d == 0 {
                return Err(MixtureError::Dimension {
                    component: k,
                    expected: d,
                    got: self.means[k].len(),
                });
            }
            let cov = &self.covariances[k];
            if cov.len() != d * d {
                return Err(MixtureError::Dimension {
                    component: k,
                    expected: d * d,
                    got: cov.len(),
                });
            }
            for i in 0..d {
                for j in 0..i {
                    if (cov[i * d + j] - cov[j * d + i]).abs()
                        > 1e-12 * cov[i * d + i].abs().max(1.0)
                    {
                        return Err(MixtureError::NotSpd(k));
                    }
                }
            }
            if cholesky(cov, d).is_none() {
                return Err(MixtureError::NotSpd(k));
            }
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(MixtureError::WeightSum(total));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// The mixture reweighted by `exp(a·x)`, normalized. Exact: each component
    /// shifts to `μ + Σa` and its weight picks up `exp(a·μ + aᵀΣa/2)`.
    pub fn exp_tilted(&self, a: &[f64]) -> Result<Self, MixtureError> {
        let d = self.dim();
        if a.len() != d {
            return Err(MixtureError::Dimension {
                component: 0,
                expected: d,
                got: a.len(),
            });
        }
        let mut log_w = Vec::with_capacity(self.weights.len());
        let mut means = Vec::with_capacity(self.weights.len());
        for ((w, mu), cov) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            let sa: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| cov[i * d + j] * a[j]).sum())
                .collect();
            let a_mu: f64 = a.iter().zip(mu).map(|(x, y)| x * y).sum();
            let a_sa: f64 = a.iter().zip(&sa).map(|(x, y)| x * y).sum();
            log_w.push(w.ln() + a_mu + 0.5 * a_sa);
            means.push(mu.iter().zip(&sa).map(|(m, s)| m + s).collect());
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_w.iter().map(|l| (l - top).exp()).sum();
        let mut weights: Vec<f64> = log_w.iter().map(|l| (l - top).exp() / total).collect();
        // Absorb rounding so the weights sum to exactly one.
        let drift: f64 = 1.0 - weights.iter().sum::<f64>();
        weights[0] += drift;
        Self::new(weights, means, self.covariances.clone())
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<f64>] {
        &self.covariances
    }

    /// The marginal of the forward diffusion at signal level `alpha_bar`:
    /// `Σ_k w_k N(√ᾱ μ_k, ᾱ Σ_k + (1 − ᾱ) I)`.
    pub fn perturbed(&self, alpha_bar: f64) -> PreparedMixture {
        let d = self.dim();
        let sa = alpha_bar.sqrt();
        let comps = (0..self.n_components())
            .map(|k| {
                // I + ᾱ(Σ − I): keeps N(0, I) an exact fixed point in floating point.
                let mut cov = self.covariances[k].clone();
                for i in 0..d {
                    cov[i * d + i] -= 1.0;
                }
                for c in &mut cov {
                    *c *= alpha_bar;
                }
                for i in 0..d {
                    cov[i * d + i] += 1.0;
                }
                let chol = cholesky(&cov, d).expect("ᾱΣ + (1-ᾱ)I is SPD for SPD Σ");
                let log_det: f64 = (0..d).map(|i| 2.0 * chol[i * d + i].ln()).sum();
                PreparedComponent {
                    log_norm: self.weights[k].ln() - 0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
                    mean: self.means[k].iter().map(|m| sa * m).collect(),
                    chol,
                }
            })
            .collect();
        PreparedMixture { dim: d, comps }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.perturbed(1.0).log_density(x)
    }

    /// Draws component indices then Gaussian deviates from one stream.
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        let d = self.dim();
        let mut z = vec![0.0; d];
        let chols: Vec<Vec<f64>> = self
            .covariances
            .iter()
            .map(|c| cholesky(c, d).expect("validated"))
            .collect();
        for row in out.chunks_exact_mut(d) {
            let u = rng.uniform();
            let mut k = 0;
            let mut acc = self.weights[0];
            while u >= acc && k + 1 < self.weights.len() {
                k += 1;
                acc += self.weights[k];
            }
            rng.fill_normal(&mut z);
            let l = &chols[k];
            for i in 0..d {
                row[i] = self.means[k][i] + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>();
            }
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut out = vec![0.0; n * self.dim()];
        let mut rng = RngStream::derive(seed, StreamTag::Dataset, 0);
        self.sample_into(&mut rng, &mut out);
        out
    }
}

#[derive(Clone, Debug)]
struct PreparedComponent {
    log_norm: f64,
    mean: Vec<f64>,
    chol: Vec<f64>,
}

/// A mixture with factorized covariances, ready for repeated evaluation.
#[derive(Clone, Debug)]
pub struct PreparedMixture {
    dim: usize,
    comps: Vec<PreparedComponent>,
}

impl PreparedMixture {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.dim];
        let logs: Vec<f64> = self
            .comps
            .iter()
            .map(|c| c.log_norm - 0.5 * self.mahalanobis(c, x, &mut buf))
            .collect();
        log_sum_exp(&logs)
    }

    fn mahalanobis(&self, c: &PreparedComponent, x: &[f64], buf: &mut [f64]) -> f64 {
        for i in 0..self.dim {
            buf[i] = x[i] - c.mean[i];
        }
        forward_sub(&c.chol, self.dim, buf);
        buf.iter().map(|v| v * v).sum()
    }

    /// `∇ log p(x)`: responsibility-weighted component scores, with the
    /// responsibilities normalized in log space.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        self.score_batch_into(x, out);
    }

    /// Scores for every row of `xs`, reusing one set of scratch buffers.
    pub fn score_batch_into(&self, xs: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let k = self.comps.len();
        let mut logs = vec![0.0; k];
        let mut solved = vec![0.0; k * d];
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            for (c, comp) in self.comps.iter().enumerate() {
                let buf = &mut solved[c * d..(c + 1) * d];
                let m = self.mahalanobis(comp, x, buf);
                logs[c] = comp.log_norm - 0.5 * m;
                // Σ^{-1}(x - μ) = L^{-T} (L^{-1}(x - μ)); `buf` already holds L^{-1}(x - μ).
                backward_sub(&comp.chol, d, buf);
            }
            let lse = log_sum_exp(&logs);
            o.iter_mut().for_each(|v| *v = 0.0);
            for (c, lg) in logs.iter().enumerate() {
                let r = (lg - lse).exp();
                for i in 0..d {
                    o[i] -= r * solved[c * d + i];
                }
            }
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
