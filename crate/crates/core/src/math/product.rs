use ndarray::{Array1, ArrayView1};

use super::PosteriorParams;
use crate::error::{shape_check, Error, Result};

/// Mean and variance of the normalized product of diagonal Gaussians.
///
/// The scalar normalizing factor of the product is not computed; only the
/// shape of the resulting density is.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProduct {
    pub mean: Array1<f64>,
    pub variance: Array1<f64>,
}

/// Multiplies diagonal Gaussian densities dimension by dimension.
///
/// Precisions add; the mean is the precision-weighted average of the
/// component means. When every component shrinks towards zero variance, so
/// does the product.
pub fn gaussian_product(components: &[(ArrayView1<'_, f64>, ArrayView1<'_, f64>)]) -> Result<GaussianProduct> {
    let (first_mean, _) = components
        .first()
        .ok_or_else(|| Error::InvalidArgument("gaussian_product needs at least one component".into()))?;
    let dim = first_mean.len();
    let mut precision = Array1::<f64>::zeros(dim);
    let mut weighted = Array1::<f64>::zeros(dim);
    for (mean, variance) in components {
        shape_check("component mean", &[dim], mean.shape())?;
        shape_check("component variance", &[dim], variance.shape())?;
        for j in 0..dim {
            let v = variance[j];
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain {
                    name: "variance",
                    requirement: "positive and finite",
                    value: v,
                });
            }
            precision[j] += 1.0 / v;
            weighted[j] += mean[j] / v;
        }
    }
    let variance = precision.mapv(|p| 1.0 / p);
    let mean = &variance * &weighted;
    Ok(GaussianProduct { mean, variance })
}

/// Product of the individual posteriors of every row in `params`.
pub fn product_of_posteriors(params: &PosteriorParams) -> Result<GaussianProduct> {
    let var = params.variance();
    let components: Vec<_> = params
        .mu()
        .rows()
        .into_iter()
        .zip(var.rows())
        .collect();
    gaussian_product(&components)
}
