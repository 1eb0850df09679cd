use ndarray::{Array2, Array4};

use super::{scoped, Backprop, Param, Parameterized, Scalar};

const EPS: f64 = 1e-5;

/// Group normalization over NHWC input with per-channel affine parameters.
///
/// Statistics are taken per example, so results never depend on what else
/// is in the batch.
#[derive(Debug, Clone)]
pub struct GroupNorm<F> {
    gamma: Param<F>,
    beta: Param<F>,
    groups: usize,
    channels: usize,
    cache: Option<(Array4<F>, Array2<F>)>,
}

impl<F: Scalar> GroupNorm<F> {
    pub fn new(prefix: &str, groups: usize, channels: usize) -> Self {
        assert!(groups > 0 && channels.is_multiple_of(groups), "{channels} channels not divisible into {groups} groups");
        Self {
            gamma: Param::filled(scoped(prefix, "gamma"), &[channels], F::one()),
            beta: Param::zeros(scoped(prefix, "beta"), &[channels]),
            groups,
            channels,
            cache: None,
        }
    }

    /// The most groups, up to 8, that divide the channels with at least
    /// two channels per group.
    pub fn default_groups(channels: usize) -> usize {
        (1..=8)
            .rev()
            .find(|g| channels.is_multiple_of(*g) && channels / g >= 2)
            .unwrap_or(1)
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        let (n, h, w, c) = x.dim();
        assert_eq!(c, self.channels, "{}: channels", self.gamma.name);
        let cg = c / self.groups;
        let hw = h * w;
        let count = F::from_f64((hw * cg) as f64);
        let x = x.as_standard_layout();
        let xs = x.as_slice().unwrap();
        let mut xhat = Array4::<F>::zeros((n, h, w, c));
        let mut inv_std = Array2::<F>::zeros((n, self.groups));
        let mut y = Array4::<F>::zeros((n, h, w, c));
        {
            let xh = xhat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            let gamma = self.gamma.value.as_slice().unwrap();
            let beta = self.beta.value.as_slice().unwrap();
            for b in 0..n {
                for g in 0..self.groups {
                    let chans = g * cg..(g + 1) * cg;
                    let mut mean = F::zero();
                    for p in 0..hw {
                        let base = (b * hw + p) * c;
                        for ch in chans.clone() {
                            mean += xs[base + ch];
                        }
                    }
                    mean = mean / count;
                    let mut var = F::zero();
                    for p in 0..hw {
                        let base = (b * hw + p) * c;
                        for ch in chans.clone() {
                            let d = xs[base + ch] - mean;
                            var += d * d;
                        }
                    }
                    var = var / count;
                    let istd = F::one() / (var + F::from_f64(EPS)).sqrt();
                    inv_std[[b, g]] = istd;
                    for p in 0..hw {
                        let base = (b * hw + p) * c;
                        for ch in chans.clone() {
                            let v = (xs[base + ch] - mean) * istd;
                            xh[base + ch] = v;
                            ys[base + ch] = v * gamma[ch] + beta[ch];
                        }
                    }
                }
            }
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn backward(&mut self, dy: &Array4<F>, mode: Backprop) -> Array4<F> {
        let (xhat, inv_std) = self.cache.as_ref().expect("backward before forward");
        let (n, h, w, c) = dy.dim();
        let cg = c / self.groups;
        let hw = h * w;
        let count = F::from_f64((hw * cg) as f64);
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().unwrap();
        let xh = xhat.as_slice().unwrap();
        let gamma = self.gamma.value.as_slice().unwrap();
        if mode.params() {
            let dgamma = self.gamma.grad.as_slice_mut().unwrap();
            let dbeta = self.beta.grad.as_slice_mut().unwrap();
            for (i, (&d, &v)) in dys.iter().zip(xh).enumerate() {
                let ch = i % c;
                dgamma[ch] += d * v;
                dbeta[ch] += d;
            }
        }
        let mut dx = Array4::<F>::zeros((n, h, w, c));
        let dxs = dx.as_slice_mut().unwrap();
        for b in 0..n {
            for g in 0..self.groups {
                let chans = g * cg..(g + 1) * cg;
                let mut mean_d = F::zero();
                let mut mean_dx = F::zero();
                for p in 0..hw {
                    let base = (b * hw + p) * c;
                    for ch in chans.clone() {
                        let d = dys[base + ch] * gamma[ch];
                        mean_d += d;
                        mean_dx += d * xh[base + ch];
                    }
                }
                mean_d = mean_d / count;
                mean_dx = mean_dx / count;
                let istd = inv_std[[b, g]];
                for p in 0..hw {
                    let base = (b * hw + p) * c;
                    for ch in chans.clone() {
                        let d = dys[base + ch] * gamma[ch];
                        dxs[base + ch] = istd * (d - mean_d - xh[base + ch] * mean_dx);
                    }
                }
            }
        }
        dx
    }
}

impl<F: Scalar> Parameterized<F> for GroupNorm<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}
