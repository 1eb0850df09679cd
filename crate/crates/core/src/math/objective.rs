//! Generator and discriminator objectives with their analytic gradients.
//!
//! Cross-entropies follow the usual binary form: `BCE(1, r) = -mean ln r`
//! and `BCE(0, r) = -mean ln(1 - r)`, both minimized by the party that
//! wants the target. The generator minimizes `BCE(1, D(x_hat))`; the
//! discriminator minimizes `BCE(1, D(x)) + BCE(0, D(x_hat))`.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView4, Zip};

use super::kl::{kl_global, kl_individual, kl_standard_vae};
use super::{
    batch_posterior_stats, sigmoid, softplus, BatchPosteriorStats, LossWeights, PosteriorParams,
    RealismMap, StatsSource,
};
use crate::error::{shape_check, Error, Result};

/// Unweighted terms of the regularized objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeneratorTerms {
    pub kl_global: f64,
    pub kl_individual: f64,
    /// Mean absolute pixel difference.
    pub l1: f64,
    /// `BCE(1, realism)` of the generated images.
    pub adversarial: f64,
}

impl GeneratorTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.beta1 * self.kl_global + w.beta2 * self.kl_individual + w.beta3 * self.l1 + w.beta4 * self.adversarial
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLoss {
    pub total: f64,
    pub terms: GeneratorTerms,
}

/// Partial derivatives of the weighted generator objective.
///
/// `z` is treated as an independent input here; chain it through the
/// reparametrization with [`crate::sampler::LatentBatch::pullback`].
/// `realism` is the derivative with respect to the logits when the map
/// carries logits, otherwise with respect to the probabilities.
#[derive(Debug, Clone)]
pub struct GeneratorGrads {
    pub mu: Array2<f64>,
    pub log_var: Array2<f64>,
    pub z: Array2<f64>,
    pub x_hat: Array4<f64>,
    pub realism: Array3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveOptions {
    pub stats_from: StatsSource,
    /// Lower clamp on the batch variance inside the global KL. `None` turns
    /// a collapsed dimension into an error instead.
    pub variance_floor: Option<f64>,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self {
            stats_from: StatsSource::Samples,
            variance_floor: Some(1e-8),
        }
    }
}

/// Mean absolute difference over every element.
pub fn l1_mean(x: ArrayView4<f64>, x_hat: ArrayView4<f64>) -> Result<f64> {
    shape_check("x_hat", x.shape(), x_hat.shape())?;
    let mut acc = 0.0;
    Zip::from(&x).and(&x_hat).for_each(|&a, &b| acc += (a - b).abs());
    Ok(acc / x.len().max(1) as f64)
}

fn check_probabilities(map: &RealismMap) -> Result<()> {
    if map.logits().is_some() {
        return Ok(());
    }
    match map.probabilities().iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        Some(&bad) => Err(Error::Domain {
            name: "realism",
            requirement: "inside the open interval (0, 1)",
            value: bad,
        }),
        None => Ok(()),
    }
}

/// Binary cross-entropy of the map against an all-ones (`target_one`) or
/// all-zeros target, averaged over batch and patches.
pub fn bce(map: &RealismMap, target_one: bool) -> Result<f64> {
    check_probabilities(map)?;
    let n = map.len().max(1) as f64;
    let sum: f64 = match map.logits() {
        Some(logits) => logits
            .iter()
            .map(|&l| if target_one { softplus(-l) } else { softplus(l) })
            .sum(),
        None => map
            .probabilities()
            .iter()
            .map(|&p| if target_one { -p.ln() } else { -(-p).ln_1p() })
            .sum(),
    };
    Ok(sum / n)
}

/// Gradient of [`bce`]; see [`GeneratorGrads`] for which variable it is
/// taken against.
pub fn bce_grad(map: &RealismMap, target_one: bool) -> Result<Array3<f64>> {
    check_probabilities(map)?;
    let n = map.len().max(1) as f64;
    let t = if target_one { 1.0 } else { 0.0 };
    Ok(match map.logits() {
        Some(logits) => logits.mapv(|l| (sigmoid(l) - t) / n),
        None => map.probabilities().mapv(|p| {
            if target_one {
                -1.0 / (p * n)
            } else {
                1.0 / ((1.0 - p) * n)
            }
        }),
    })
}

/// Regularized objective evaluated on precomputed batch statistics:
/// `b1 KL_G + b2 KL_I + b3 L1 + b4 BCE(1, realism)`.
pub fn generator_loss(
    x: ArrayView4<f64>,
    x_hat: ArrayView4<f64>,
    params: &PosteriorParams,
    stats: &BatchPosteriorStats,
    realism: &RealismMap,
    w: &LossWeights,
) -> Result<GeneratorLoss> {
    w.validate()?;
    shape_check("batch stats", &[params.latent_dim()], stats.mean.shape())?;
    let terms = GeneratorTerms {
        kl_global: kl_global(stats)?,
        kl_individual: kl_individual(params),
        l1: l1_mean(x, x_hat)?,
        adversarial: bce(realism, true)?,
    };
    Ok(GeneratorLoss {
        total: terms.weighted_total(w),
        terms,
    })
}

/// `b4 [BCE(1, real) + BCE(0, fake)]`.
pub fn discriminator_loss(real: &RealismMap, fake: &RealismMap, w: &LossWeights) -> Result<f64> {
    Ok(discriminator_objective(real, fake, w)?.0)
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGrads {
    pub real: Array3<f64>,
    pub fake: Array3<f64>,
}

pub fn discriminator_objective(
    real: &RealismMap,
    fake: &RealismMap,
    w: &LossWeights,
) -> Result<(f64, DiscriminatorGrads)> {
    w.validate()?;
    shape_check("realism_fake", real.shape(), fake.shape())?;
    let value = w.beta4 * (bce(real, true)? + bce(fake, false)?);
    let grads = DiscriminatorGrads {
        real: bce_grad(real, true)? * w.beta4,
        fake: bce_grad(fake, false)? * w.beta4,
    };
    Ok((value, grads))
}

/// Regularized objective with the batch statistics computed from `mu` and
/// the sampled latents `z`, returning value and partial derivatives.
pub fn generator_objective(
    x: ArrayView4<f64>,
    x_hat: ArrayView4<f64>,
    params: &PosteriorParams,
    z: ArrayView2<f64>,
    realism: &RealismMap,
    w: &LossWeights,
    opts: &ObjectiveOptions,
) -> Result<(GeneratorLoss, GeneratorGrads)> {
    w.validate()?;
    shape_check("z", params.mu().shape(), z.shape())?;
    shape_check("x_hat", x.shape(), x_hat.shape())?;
    let mu = params.mu().view();
    let spread_of = match opts.stats_from {
        StatsSource::Samples => z,
        StatsSource::Means => mu,
    };
    let raw = batch_posterior_stats(mu, spread_of)?;
    let (batch, dim) = mu.dim();
    let m = batch as f64;

    // Global KL and its derivative with respect to the batch variance.
    let mut kl_g = 0.0;
    let mut d_var = Array1::<f64>::zeros(dim);
    for j in 0..dim {
        let (mean, var) = (raw.mean[j], raw.variance[j]);
        let var_eff = match opts.variance_floor {
            Some(floor) if var < floor => floor,
            Some(_) => var,
            None if var > 0.0 => var,
            None => return Err(Error::Collapse { dim: j, variance: var }),
        };
        let x = var_eff - 1.0;
        kl_g += (x - x.ln_1p()).max(0.0) + mean * mean;
        if var_eff == var {
            d_var[j] = w.beta1 * 0.5 * (1.0 - 1.0 / var);
        }
    }
    kl_g *= 0.5;

    // d(var_j)/d(s_ij) = 2 (s_ij - mean_j) / M and
    // d(var_j)/d(mean_j) = -2 sum_i (s_ij - mean_j) / M.
    let mut g_spread = Array2::<f64>::zeros((batch, dim));
    let mut spread_sum = Array1::<f64>::zeros(dim);
    for i in 0..batch {
        for j in 0..dim {
            let dev = spread_of[[i, j]] - raw.mean[j];
            spread_sum[j] += dev;
            g_spread[[i, j]] = d_var[j] * 2.0 * dev / m;
        }
    }
    let d_mean: Array1<f64> = (0..dim)
        .map(|j| w.beta1 * raw.mean[j] - d_var[j] * 2.0 * spread_sum[j] / m)
        .collect();

    let mut g_mu = Array2::<f64>::zeros((batch, dim));
    for mut row in g_mu.rows_mut() {
        row.assign(&(&d_mean / m));
    }
    let g_z = match opts.stats_from {
        StatsSource::Samples => g_spread,
        StatsSource::Means => {
            g_mu += &g_spread;
            Array2::zeros((batch, dim))
        }
    };

    let kl_i = kl_individual(params);
    let g_lv = params.log_var().mapv(|lv| w.beta2 * lv.exp_m1());

    let l1 = l1_mean(x, x_hat)?;
    let n = x.len().max(1) as f64;
    let mut g_xhat = Array4::<f64>::zeros(x.raw_dim());
    Zip::from(&mut g_xhat)
        .and(&x)
        .and(&x_hat)
        .for_each(|g, &a, &b| *g = w.beta3 * sign(b - a) / n);

    let adversarial = bce(realism, true)?;
    let g_realism = bce_grad(realism, true)? * w.beta4;

    let terms = GeneratorTerms {
        kl_global: kl_g,
        kl_individual: kl_i,
        l1,
        adversarial,
    };
    Ok((
        GeneratorLoss {
            total: terms.weighted_total(w),
            terms,
        },
        GeneratorGrads {
            mu: g_mu,
            log_var: g_lv,
            z: g_z,
            x_hat: g_xhat,
            realism: g_realism,
        },
    ))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Baseline objective `b1 KL + b2 L1` with the per-example KL against the
/// standard normal prior (standard VAE, or beta-VAE when `b1 > 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardLoss {
    pub total: f64,
    pub kl: f64,
    pub l1: f64,
}

#[derive(Debug, Clone)]
pub struct StandardGrads {
    pub mu: Array2<f64>,
    pub log_var: Array2<f64>,
    pub x_hat: Array4<f64>,
}

pub fn standard_objective(
    x: ArrayView4<f64>,
    x_hat: ArrayView4<f64>,
    params: &PosteriorParams,
    w: &LossWeights,
) -> Result<(StandardLoss, StandardGrads)> {
    w.validate()?;
    let kl = kl_standard_vae(params);
    let l1 = l1_mean(x, x_hat)?;
    let n = x.len().max(1) as f64;
    let mut g_xhat = Array4::<f64>::zeros(x.raw_dim());
    Zip::from(&mut g_xhat)
        .and(&x)
        .and(&x_hat)
        .for_each(|g, &a, &b| *g = w.beta2 * sign(b - a) / n);
    let grads = StandardGrads {
        mu: params.mu().mapv(|m| w.beta1 * m),
        log_var: params.log_var().mapv(|lv| w.beta1 * 0.5 * lv.exp_m1()),
        x_hat: g_xhat,
    };
    Ok((
        StandardLoss {
            total: w.beta1 * kl + w.beta2 * l1,
            kl,
            l1,
        },
        grads,
    ))
}
