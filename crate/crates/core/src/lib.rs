//! Regularized-ELBO VAE-GAN: mixture-posterior KL terms, a residual
//! encoder/decoder, a patch discriminator, a reproducible trainer and
//! latent-space studies.
//!
//! The guide in `book/` walks through each module; its code listings are
//! compiled and run as doctests of this crate.

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod math;
pub mod nets;
pub mod nn;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
