use ndarray::{Array2, Axis, Ix1, Ix2};
use rand::Rng;

use super::{scoped, Backprop, Param, Parameterized, Scalar};

/// Affine map `y = x W + b` on row vectors.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    weight: Param<F>,
    bias: Param<F>,
    cache: Option<Array2<F>>,
}

impl<F: Scalar> Linear<F> {
    /// Normal weights with standard deviation `gain / sqrt(in)`, zero bias.
    pub fn new<R: Rng>(prefix: &str, inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (inputs as f64).sqrt();
        Self {
            weight: Param::normal(scoped(prefix, "weight"), &[inputs, outputs], std, rng),
            bias: Param::zeros(scoped(prefix, "bias"), &[outputs]),
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, x: &Array2<F>) -> Array2<F> {
        assert_eq!(x.ncols(), self.inputs(), "{}: input width", self.weight.name);
        let weight = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let bias = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = x.dot(&weight);
        y += &bias;
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<F>, mode: Backprop) -> Array2<F> {
        let x = self.cache.as_ref().expect("backward before forward");
        if mode.params() {
            self.weight.grad += &x.t().dot(dy).into_dyn();
            self.bias.grad += &dy.sum_axis(Axis(0)).into_dyn();
        }
        let weight = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        dy.dot(&weight.t())
    }
}

impl<F: Scalar> Parameterized<F> for Linear<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_layer_grads;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::<f64>::new("fc", 5, 3, 1.0, &mut rng);
        let x = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
        check_layer_grads(lin, x, |l, x| l.forward(x), |l, dy| l.backward(dy, Backprop::Full));
    }
}
