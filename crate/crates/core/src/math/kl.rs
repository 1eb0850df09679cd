use ndarray::{Array1, Zip};

use super::{BatchPosteriorStats, PosteriorParams};
use crate::error::{Error, Result};

/// `r - 1 - ln r` written as `x - ln(1 + x)` with `x = r - 1`, which keeps
/// full precision near `r = 1`. Never negative.
fn ratio_gap(ratio: f64) -> f64 {
    let x = ratio - 1.0;
    (x - x.ln_1p()).max(0.0)
}

/// `exp(lv) - 1 - lv`, i.e. `sigma^2 - 1 - ln sigma^2` in terms of the
/// log-variance.
pub(crate) fn log_var_gap(lv: f64) -> f64 {
    (lv.exp_m1() - lv).max(0.0)
}

/// `KL(N(mu1, var1) || N(mu2, var2))`.
///
/// Uses the standard closed form in which the squared mean difference is
/// scaled by `1 / var2`. For `var2 = 1` this is the expression used by every
/// KL term of the objective.
pub fn kl_univariate_gaussian(mu1: f64, var1: f64, mu2: f64, var2: f64) -> Result<f64> {
    for (name, value) in [("mu1", mu1), ("mu2", mu2)] {
        if !value.is_finite() {
            return Err(Error::Domain {
                name,
                requirement: "finite",
                value,
            });
        }
    }
    for (name, value) in [("var1", var1), ("var2", var2)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Domain {
                name,
                requirement: "positive and finite",
                value,
            });
        }
    }
    let diff = mu1 - mu2;
    Ok(0.5 * (ratio_gap(var1 / var2) + diff * diff / var2))
}

/// Standard VAE KL term: `1/2 sum_i sum_j [sigma^2 + mu^2 - 1 - ln sigma^2]`,
/// summed over the whole batch.
pub fn kl_standard_vae(params: &PosteriorParams) -> f64 {
    let mut total = 0.0;
    Zip::from(params.mu())
        .and(params.log_var())
        .for_each(|&m, &lv| total += log_var_gap(lv) + m * m);
    0.5 * total
}

/// KL between the moment-matched global posterior `N(mean, diag(variance))`
/// and the standard normal prior.
///
/// Fails with [`Error::Collapse`] on the first dimension whose variance is
/// not strictly positive.
pub fn kl_global(stats: &BatchPosteriorStats) -> Result<f64> {
    let mut total = 0.0;
    for (dim, (&m, &v)) in stats.mean.iter().zip(stats.variance.iter()).enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Collapse { dim, variance: v });
        }
        total += ratio_gap(v) + m * m;
    }
    Ok(0.5 * total)
}

/// [`kl_global`] with each variance clamped below at `floor`. Returns the
/// value and a mask of the dimensions that were clamped.
pub fn kl_global_floored(stats: &BatchPosteriorStats, floor: f64) -> (f64, Array1<bool>) {
    let mut total = 0.0;
    let mut clamped = Array1::from_elem(stats.variance.len(), false);
    for (j, (&m, &v)) in stats.mean.iter().zip(stats.variance.iter()).enumerate() {
        let v_eff = if v < floor || v.is_nan() {
            clamped[j] = true;
            floor
        } else {
            v
        };
        total += ratio_gap(v_eff) + m * m;
    }
    (0.5 * total, clamped)
}

/// Individual-variance regularizer: `sum_i sum_j [sigma^2 - 1 - ln sigma^2]`.
///
/// No factor of one half, and no dependence on the means: moving `mu` does
/// not change the result by a single bit.
pub fn kl_individual(params: &PosteriorParams) -> f64 {
    params.log_var().iter().map(|&lv| log_var_gap(lv)).sum()
}
