//! Closed-form Gaussian KL terms, mixture-posterior batch statistics and the
//! composite generator / discriminator objectives.
//!
//! Everything here works in `f64` on host arrays. The networks run in `f32`
//! and hand their outputs to these functions, which return both loss values
//! and the partial derivatives needed to back-propagate into the networks.

mod kl;
mod objective;
mod product;
mod stats;

pub use kl::{kl_global, kl_global_floored, kl_individual, kl_standard_vae, kl_univariate_gaussian};
pub use objective::{
    bce, bce_grad, discriminator_loss, discriminator_objective, generator_loss,
    generator_objective, l1_mean, standard_objective, DiscriminatorGrads, GeneratorGrads,
    GeneratorLoss, GeneratorTerms, ObjectiveOptions, StandardGrads, StandardLoss,
};
pub use product::{gaussian_product, product_of_posteriors, GaussianProduct};
pub use stats::{batch_posterior_stats, BatchPosteriorStats, StatsSource};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};

/// Per-example encoder outputs: the mean and log-variance of each
/// individual posterior `N(mu_i, diag(exp(log_var_i)))`.
///
/// Rows index examples, columns index latent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    mu: Array2<f64>,
    log_var: Array2<f64>,
}

impl PosteriorParams {
    pub fn new(mu: Array2<f64>, log_var: Array2<f64>) -> Result<Self> {
        shape_check("log_var", mu.shape(), log_var.shape())?;
        if let Some(&bad) = mu.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain {
                name: "mu",
                requirement: "finite",
                value: bad,
            });
        }
        if let Some(&bad) = log_var.iter().find(|lv| {
            let var = lv.exp();
            !(var > 0.0 && var.is_finite())
        }) {
            return Err(Error::Domain {
                name: "log_var",
                requirement: "such that exp(log_var) is positive and finite",
                value: bad,
            });
        }
        Ok(Self { mu, log_var })
    }

    /// All rows at the prior: `mu = 0`, `log_var = 0`.
    pub fn prior(batch: usize, latent_dim: usize) -> Self {
        Self {
            mu: Array2::zeros((batch, latent_dim)),
            log_var: Array2::zeros((batch, latent_dim)),
        }
    }

    pub fn mu(&self) -> &Array2<f64> {
        &self.mu
    }

    pub fn log_var(&self) -> &Array2<f64> {
        &self.log_var
    }

    /// `sigma^2 = exp(log_var)`.
    pub fn variance(&self) -> Array2<f64> {
        self.log_var.mapv(f64::exp)
    }

    /// `sigma = exp(log_var / 2)`.
    pub fn std_dev(&self) -> Array2<f64> {
        self.log_var.mapv(|lv| (0.5 * lv).exp())
    }

    pub fn batch_size(&self) -> usize {
        self.mu.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.ncols()
    }

    /// Same variances, different means.
    pub fn with_mu(&self, mu: Array2<f64>) -> Result<Self> {
        Self::new(mu, self.log_var.clone())
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        (self.mu, self.log_var)
    }
}

/// Weights of the four terms of the regularized objective.
///
/// In the baseline modes only `beta1` (KL) and `beta2` (reconstruction) are
/// read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
}

impl LossWeights {
    /// `(1, 0.5, 5000, 100)`, the default weighting.
    pub const REFERENCE: LossWeights = LossWeights {
        beta1: 1.0,
        beta2: 0.5,
        beta3: 5000.0,
        beta4: 100.0,
    };

    pub fn new(beta1: f64, beta2: f64, beta3: f64, beta4: f64) -> Result<Self> {
        let w = Self {
            beta1,
            beta2,
            beta3,
            beta4,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("beta4", self.beta4),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Domain {
                    name,
                    requirement: "finite and non-negative",
                    value,
                });
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::REFERENCE
    }
}

/// Discriminator output: one realism probability per image patch, shaped
/// `(batch, H/8, W/8)`.
///
/// When built from logits the logits are kept so cross-entropies can be
/// evaluated without saturating.
#[derive(Debug, Clone, PartialEq)]
pub struct RealismMap {
    prob: Array3<f64>,
    logits: Option<Array3<f64>>,
}

impl RealismMap {
    /// Wraps probabilities as-is. Range checks happen in the loss functions.
    pub fn from_probabilities(prob: Array3<f64>) -> Self {
        Self { prob, logits: None }
    }

    pub fn from_logits(logits: Array3<f64>) -> Self {
        let prob = logits.mapv(sigmoid);
        Self {
            prob,
            logits: Some(logits),
        }
    }

    /// A map filled with a constant probability.
    pub fn constant(shape: (usize, usize, usize), p: f64) -> Self {
        Self::from_probabilities(Array3::from_elem(shape, p))
    }

    pub fn probabilities(&self) -> &Array3<f64> {
        &self.prob
    }

    pub fn logits(&self) -> Option<&Array3<f64>> {
        self.logits.as_ref()
    }

    pub fn shape(&self) -> &[usize] {
        self.prob.shape()
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
