//! A small NHWC layer library with explicit forward/backward passes.
//!
//! Layers cache what their backward pass needs during `forward`, so every
//! `backward` call must follow the matching `forward`. Parameter gradients
//! accumulate until [`Parameterized::zero_grad`]. All layers are generic
//! over [`Scalar`] so the same code runs in `f32` for training and in `f64`
//! for finite-difference checks.

mod activation;
mod adam;
mod conv;
mod linear;
mod norm;

pub use activation::Activation;
pub use adam::{Adam, AdamConfig, AdamMoments};
pub use conv::{col2im, im2col, Conv2d, ConvTranspose2d};
pub use linear::Linear;
pub use norm::GroupNorm;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

pub trait Scalar:
    LinalgScalar
    + Float
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Whether a backward pass should also accumulate parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backprop {
    /// Input gradients and parameter gradients.
    Full,
    /// Input gradients only; parameter gradients are left untouched.
    InputOnly,
}

impl Backprop {
    pub fn params(self) -> bool {
        matches!(self, Backprop::Full)
    }
}

/// A named trainable array and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(name: impl Into<String>, value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: F) -> Self {
        Self::new(name, ArrayD::from_elem(IxDyn(shape), v))
    }

    /// Normal entries with standard deviation `std`.
    pub fn normal<R: Rng>(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> Self {
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            let e: f64 = rng.sample(StandardNormal);
            F::from_f64(e * std)
        });
        Self::new(name, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns parameters.
pub trait Parameterized<F: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.grad.fill(F::zero()));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |p| names.push(p.name.clone()));
        names
    }
}

/// Element-wise conversion between scalar types.
pub fn cast<A: Scalar, B: Scalar, D: ndarray::Dimension>(x: &ndarray::Array<A, D>) -> ndarray::Array<B, D> {
    x.mapv(|v| B::from_f64(v.to_f64()))
}

/// Joins a scope prefix and a local name with a dot.
pub(crate) fn scoped(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
