//! Flat key-value training configuration.
//!
//! Every key is optional; missing keys take the defaults below, which are
//! the published settings where one exists. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSource, DatasetSpec};
use crate::error::{Error, Result};
use crate::math::{LossWeights, ObjectiveOptions, StatsSource};
use crate::nets::{DiscriminatorSpec, EncoderSpec};
use crate::nn::AdamConfig;

/// Which objective to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Mixture-posterior ELBO with the patch discriminator.
    #[default]
    Proposed,
    /// Closed-form KL plus L1 reconstruction weighted by `beta1` and
    /// `beta2`. No discriminator.
    StandardVae,
    /// As `standard_vae` with `beta1 > 1`.
    BetaVae,
}

impl Mode {
    pub fn uses_discriminator(self) -> bool {
        self == Mode::Proposed
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Mode::Proposed),
            "standard_vae" => Ok(Mode::StandardVae),
            "beta_vae" => Ok(Mode::BetaVae),
            _ => Err(Error::Config(format!(
                "unknown mode `{s}` (expected proposed, standard_vae or beta_vae)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Proposed => "proposed",
            Mode::StandardVae => "standard_vae",
            Mode::BetaVae => "beta_vae",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// `synthetic` or a directory of images.
    pub data: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub train_count: usize,
    pub test_count: usize,

    pub latent_dim: usize,
    pub stages: usize,
    pub identity_blocks: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub disc_base_channels: usize,

    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per step; 1 keeps it constant.
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub stats_from: StatsSource,
    /// Floor applied to the batch variance inside the global KL term.
    /// Negative disables the floor.
    pub variance_floor: f64,

    pub max_steps: u64,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 writes only the last.
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Proposed,
            data: "synthetic".into(),
            height: 256,
            width: 256,
            channels: 3,
            train_count: 24_000,
            test_count: 6_000,
            latent_dim: 512,
            stages: 6,
            identity_blocks: 2,
            base_channels: 64,
            max_channels: 512,
            disc_base_channels: 64,
            batch_size: 20,
            learning_rate: 1e-4,
            lr_decay: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            beta1: LossWeights::REFERENCE.beta1,
            beta2: LossWeights::REFERENCE.beta2,
            beta3: LossWeights::REFERENCE.beta3,
            beta4: LossWeights::REFERENCE.beta4,
            stats_from: StatsSource::Samples,
            variance_floor: 1e-8,
            max_steps: 100_000,
            seed: 0,
            checkpoint_every: 1_000,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl TrainConfig {
    /// Reads a TOML file and validates it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0
        {
            return fail("adam moments must lie in [0, 1) and adam_eps must be positive".into());
        }
        self.weights().validate().or_else(|e| fail(e.to_string()))?;
        if self.mode == Mode::BetaVae && self.beta1 <= 1.0 {
            return fail(format!("beta_vae mode needs beta1 > 1, got {}", self.beta1));
        }
        if self.batch_size > self.train_count {
            return fail(format!(
                "batch_size {} exceeds train_count {}",
                self.batch_size, self.train_count
            ));
        }
        if !self.height.is_multiple_of(8) || !self.width.is_multiple_of(8) {
            return fail(format!("resolution {}x{} must be divisible by 8", self.height, self.width));
        }
        if self.disc_base_channels == 0 {
            return fail("disc_base_channels must be positive".into());
        }
        self.encoder_spec().validate().or_else(|e| fail(e.to_string()))?;
        self.dataset_spec().validate().or_else(|e| fail(e.to_string()))?;
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            beta1: self.beta1,
            beta2: self.beta2,
            beta3: self.beta3,
            beta4: self.beta4,
        }
    }

    pub fn objective_options(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            stats_from: self.stats_from,
            variance_floor: (self.variance_floor >= 0.0).then_some(self.variance_floor),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Learning rate in effect at step `step` (zero-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        self.learning_rate * self.lr_decay.powf(step as f64)
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            height: self.height,
            width: self.width,
            channels: self.channels,
            latent_dim: self.latent_dim,
            stages: self.stages,
            identity_blocks: self.identity_blocks,
            base_channels: self.base_channels,
            max_channels: self.max_channels,
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec {
            channels: self.channels,
            base_channels: self.disc_base_channels,
            max_channels: self.max_channels,
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            source: self.data.parse::<DatasetSource>().expect("infallible"),
            height: self.height,
            width: self.width,
            channels: self.channels,
            train_count: self.train_count,
            test_count: self.test_count,
            seed: self.seed,
        }
    }
}
