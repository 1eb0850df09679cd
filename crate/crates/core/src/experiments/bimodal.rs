//! One- versus two-component Gaussian mixture comparison on 1-D samples.

use serde::{Deserialize, Serialize};

const MAX_ITERS: usize = 500;
const TOL: f64 = 1e-10;
const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub weight: f64,
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BimodalityTest {
    pub bic_one: f64,
    pub bic_two: f64,
    pub fit: MixtureFit,
    /// Minimum separation of the two means for a bimodal call.
    pub min_separation: f64,
    pub bimodal: bool,
}

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Maximum-likelihood single Gaussian: `(mean, variance, log-likelihood)`.
pub fn fit_one(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).max(VAR_FLOOR);
    let ll = xs.iter().map(|&x| normal_logpdf(x, mean, var)).sum();
    (mean, var, ll)
}

/// EM for a two-component mixture, started from the lower and upper
/// quartiles so the result is deterministic.
pub fn fit_two(xs: &[f64]) -> MixtureFit {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let (_, v0, _) = fit_one(xs);
    let mut w: f64 = 0.5;
    let mut means = [q(0.25), q(0.75)];
    let mut vars = [v0, v0];
    let mut resp = vec![0.0; xs.len()];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = prev;
    for _ in 0..MAX_ITERS {
        ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(xs) {
            let a = w.ln() + normal_logpdf(x, means[0], vars[0]);
            let b = (1.0 - w).ln() + normal_logpdf(x, means[1], vars[1]);
            let total = log_sum_exp(a, b);
            ll += total;
            *r = (a - total).exp();
        }
        let n0: f64 = resp.iter().sum();
        let n1 = xs.len() as f64 - n0;
        if n0 < 1e-9 || n1 < 1e-9 {
            break;
        }
        w = (n0 / xs.len() as f64).clamp(1e-6, 1.0 - 1e-6);
        means[0] = resp.iter().zip(xs).map(|(r, x)| r * x).sum::<f64>() / n0;
        means[1] = resp.iter().zip(xs).map(|(r, x)| (1.0 - r) * x).sum::<f64>() / n1;
        vars[0] = (resp.iter().zip(xs).map(|(r, x)| r * (x - means[0]).powi(2)).sum::<f64>() / n0).max(VAR_FLOOR);
        vars[1] = (resp.iter().zip(xs).map(|(r, x)| (1.0 - r) * (x - means[1]).powi(2)).sum::<f64>() / n1)
            .max(VAR_FLOOR);
        if (ll - prev).abs() < TOL * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
    }
    MixtureFit {
        weight: w,
        means,
        variances: vars,
        log_likelihood: ll,
    }
}

/// Bimodal when the two-component BIC is lower and the means are more than
/// `min_separation` apart.
pub fn bimodality(xs: &[f64], min_separation: f64) -> BimodalityTest {
    let n = xs.len() as f64;
    let (_, _, ll1) = fit_one(xs);
    let fit = fit_two(xs);
    let bic_one = 2.0 * n.ln() - 2.0 * ll1;
    let bic_two = 5.0 * n.ln() - 2.0 * fit.log_likelihood;
    let bimodal = xs.len() >= 4 && bic_two < bic_one && (fit.means[0] - fit.means[1]).abs() > min_separation;
    BimodalityTest {
        bic_one,
        bic_two,
        fit,
        min_separation,
        bimodal,
    }
}
