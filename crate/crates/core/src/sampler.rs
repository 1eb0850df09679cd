//! Reparametrized Gaussian sampling: `z = mu + eps * sigma` with
//! `eps ~ N(0, I)` drawn from an explicitly seeded, resumable stream.

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Result};
use crate::math::PosteriorParams;

/// Position of a sampler stream. Restoring it replays the exact same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Seeded source of standard-normal noise.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream `stream` under the same master seed; one per
    /// concurrent worker.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, seed, stream }
    }

    pub fn from_state(state: &RngState) -> Self {
        let mut s = Self::with_stream(state.seed, state.stream);
        s.rng.set_word_pos(state.word_pos);
        s
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn standard_normal(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || self.rng.sample(StandardNormal))
    }

    /// One latent draw per row of `params`.
    pub fn sample<'p>(&mut self, params: &'p PosteriorParams) -> LatentBatch<'p> {
        let seed_state = self.state();
        let eps = self.standard_normal(params.batch_size(), params.latent_dim());
        LatentBatch::with_noise(params, eps, seed_state).expect("noise drawn with matching shape")
    }

    /// `k` independent draws per row.
    pub fn sample_many<'p>(&mut self, params: &'p PosteriorParams, k: usize) -> Vec<LatentBatch<'p>> {
        (0..k).map(|_| self.sample(params)).collect()
    }
}

/// Latent samples together with the noise and parameters that produced
/// them.
#[derive(Debug, Clone)]
pub struct LatentBatch<'p> {
    z: Array2<f64>,
    eps: Array2<f64>,
    source: &'p PosteriorParams,
    seed_state: RngState,
}

impl<'p> LatentBatch<'p> {
    /// Reparametrizes with caller-supplied noise.
    pub fn with_noise(params: &'p PosteriorParams, eps: Array2<f64>, seed_state: RngState) -> Result<Self> {
        shape_check("eps", params.mu().shape(), eps.shape())?;
        let mut z = Array2::zeros(eps.raw_dim());
        Zip::from(&mut z)
            .and(params.mu())
            .and(params.log_var())
            .and(&eps)
            .for_each(|z, &m, &lv, &e| *z = m + e * (0.5 * lv).exp());
        Ok(Self {
            z,
            eps,
            source: params,
            seed_state,
        })
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn eps(&self) -> &Array2<f64> {
        &self.eps
    }

    pub fn source_params(&self) -> &'p PosteriorParams {
        self.source
    }

    /// Stream position right before the noise was drawn.
    pub fn seed_state(&self) -> RngState {
        self.seed_state
    }

    pub fn into_z(self) -> Array2<f64> {
        self.z
    }

    /// Chains `dL/dz` back to `(dL/dmu, dL/dlog_var)` with the noise held
    /// fixed: `dz/dmu = 1`, `dz/dlog_var = eps * sigma / 2`.
    pub fn pullback(&self, dz: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        shape_check("dz", self.z.shape(), dz.shape())?;
        let d_mu = dz.to_owned();
        let mut d_lv = Array2::zeros(dz.raw_dim());
        Zip::from(&mut d_lv)
            .and(dz)
            .and(&self.eps)
            .and(self.source.log_var())
            .for_each(|g, &d, &e, &lv| *g = d * e * 0.5 * (0.5 * lv).exp());
        Ok((d_mu, d_lv))
    }
}
