use ndarray::{Array, Dimension, Zip};

use super::Scalar;

/// Element-wise nonlinearity with its own backward cache.
#[derive(Debug, Clone)]
pub enum Activation<F, D: Dimension> {
    Relu(Option<Array<F, D>>),
    /// Leaky ReLU with the given negative slope.
    LeakyRelu(f64, Option<Array<F, D>>),
    Tanh(Option<Array<F, D>>),
}

impl<F: Scalar, D: Dimension> Activation<F, D> {
    pub fn relu() -> Self {
        Activation::Relu(None)
    }

    pub fn leaky_relu(slope: f64) -> Self {
        Activation::LeakyRelu(slope, None)
    }

    pub fn tanh() -> Self {
        Activation::Tanh(None)
    }

    pub fn forward(&mut self, x: &Array<F, D>) -> Array<F, D> {
        match self {
            Activation::Relu(cache) => {
                *cache = Some(x.clone());
                x.mapv(|v| v.max(F::zero()))
            }
            Activation::LeakyRelu(slope, cache) => {
                let s = F::from_f64(*slope);
                *cache = Some(x.clone());
                x.mapv(|v| if v > F::zero() { v } else { v * s })
            }
            Activation::Tanh(cache) => {
                let y = x.mapv(F::tanh);
                *cache = Some(y.clone());
                y
            }
        }
    }

    pub fn backward(&self, dy: &Array<F, D>) -> Array<F, D> {
        let mut dx = Array::zeros(dy.raw_dim());
        match self {
            Activation::Relu(cache) => {
                let x = cache.as_ref().expect("backward before forward");
                Zip::from(&mut dx).and(dy).and(x).for_each(|g, &d, &v| {
                    *g = if v > F::zero() { d } else { F::zero() };
                });
            }
            Activation::LeakyRelu(slope, cache) => {
                let s = F::from_f64(*slope);
                let x = cache.as_ref().expect("backward before forward");
                Zip::from(&mut dx).and(dy).and(x).for_each(|g, &d, &v| {
                    *g = if v > F::zero() { d } else { d * s };
                });
            }
            Activation::Tanh(cache) => {
                let y = cache.as_ref().expect("backward before forward");
                Zip::from(&mut dx)
                    .and(dy)
                    .and(y)
                    .for_each(|g, &d, &t| *g = d * (F::one() - t * t));
            }
        }
        dx
    }
}
