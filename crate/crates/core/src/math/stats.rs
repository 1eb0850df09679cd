use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};

/// Which per-example vectors feed the batch variance estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    /// Deviations of the sampled latents `z_i` from the batch mean of `mu_i`.
    #[default]
    Samples,
    /// Deviations of the means `mu_i` themselves.
    Means,
}

impl std::str::FromStr for StatsSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "samples" => Ok(Self::Samples),
            "means" => Ok(Self::Means),
            other => Err(Error::InvalidArgument(format!(
                "stats source must be `samples` or `means`, got `{other}`"
            ))),
        }
    }
}

/// Moment estimates of the uniform mixture of individual posteriors over one
/// minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPosteriorStats {
    pub mean: Array1<f64>,
    /// May contain zeros; [`super::kl_global`] rejects them.
    pub variance: Array1<f64>,
}

impl BatchPosteriorStats {
    pub fn new(mean: Array1<f64>, variance: Array1<f64>) -> Result<Self> {
        shape_check("variance", mean.shape(), variance.shape())?;
        if let Some(&bad) = variance.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain {
                name: "variance",
                requirement: "finite and non-negative",
                value: bad,
            });
        }
        Ok(Self { mean, variance })
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.len()
    }
}

/// Batch mean of `means` and the `1/M`-normalized spread of `samples`
/// around it, column by column.
///
/// Every example carries the same mixture weight `1/M`. Pass the means as
/// `samples` to estimate the spread of the means alone.
pub fn batch_posterior_stats(means: ArrayView2<f64>, samples: ArrayView2<f64>) -> Result<BatchPosteriorStats> {
    shape_check("samples", means.shape(), samples.shape())?;
    let (batch, dim) = means.dim();
    if batch < 2 {
        return Err(Error::DegenerateBatch(batch));
    }
    let inv = 1.0 / batch as f64;
    // Shifted by the first row so a constant column has an exact mean.
    let pivot = means.row(0).to_owned();
    let mut offset = Array1::<f64>::zeros(dim);
    for row in means.rows().into_iter().skip(1) {
        offset += &(&row - &pivot);
    }
    let mean = &pivot + &(offset * inv);
    let mut variance = Array1::<f64>::zeros(dim);
    for row in samples.rows() {
        for ((acc, &s), &m) in variance.iter_mut().zip(row.iter()).zip(mean.iter()) {
            let d = s - m;
            *acc += d * d;
        }
    }
    variance *= inv;
    Ok(BatchPosteriorStats { mean, variance })
}
