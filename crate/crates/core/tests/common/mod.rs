//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use mixvae::config::{Mode, TrainConfig};
use ndarray::{Array1, ArrayView2};

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// `KL(N(mu1, var1) || N(mu2, var2))` as `integral p ln(p / q)` by composite
/// Gauss-Legendre over twelve standard deviations either side of `mu1`.
pub fn kl_by_quadrature(mu1: f64, var1: f64, mu2: f64, var2: f64) -> f64 {
    let rule = gauss_legendre(16);
    let sd = var1.sqrt();
    let (lo, hi, panels) = (mu1 - 12.0 * sd, mu1 + 12.0 * sd, 400);
    let h = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let mid = lo + (k as f64 + 0.5) * h;
        for &(t, w) in &rule {
            let x = mid + 0.5 * h * t;
            let lp = log_normal(x, mu1, var1);
            acc += w * 0.5 * h * lp.exp() * (lp - log_normal(x, mu2, var2));
        }
    }
    acc
}

/// Column means of `means` and the mean squared deviation of `samples`
/// from them, two plain passes with no shifting.
pub fn two_pass_stats(means: ArrayView2<f64>, samples: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let (b, d) = means.dim();
    let mut mean = Array1::zeros(d);
    let mut var = Array1::zeros(d);
    for j in 0..d {
        let mut s = 0.0;
        for i in 0..b {
            s += means[[i, j]];
        }
        mean[j] = s / b as f64;
        let mut q = 0.0;
        for i in 0..b {
            let dev = samples[[i, j]] - mean[j];
            q += dev * dev;
        }
        var[j] = q / b as f64;
    }
    (mean, var)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / ||b||` in the Euclidean norm.
pub fn norm_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

/// The 32x32 synthetic setup used by the determinism and collapse runs.
pub fn smoke_config(mode: Mode, steps: u64, out: &std::path::Path) -> TrainConfig {
    let (beta1, beta2) = match mode {
        Mode::Proposed => (1.0, 0.5),
        _ => (50.0, 1.0),
    };
    TrainConfig {
        mode,
        height: 32,
        width: 32,
        latent_dim: 16,
        stages: 3,
        identity_blocks: 2,
        base_channels: 8,
        max_channels: 64,
        disc_base_channels: 8,
        batch_size: 8,
        train_count: 2000,
        test_count: 400,
        beta1,
        beta2,
        max_steps: steps,
        checkpoint_every: 0,
        out_dir: out.to_path_buf(),
        ..TrainConfig::default()
    }
}
