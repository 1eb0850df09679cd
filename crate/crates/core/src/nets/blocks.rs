//! Pre-activation residual blocks.

use ndarray::{Array4, Ix4};
use rand::Rng;

use crate::nn::{scoped, Activation, Backprop, Conv2d, ConvTranspose2d, GroupNorm, Param, Parameterized, Scalar};

/// Group norm followed by ReLU.
#[derive(Debug, Clone)]
pub(crate) struct NormAct<F> {
    pub(crate) norm: GroupNorm<F>,
    act: Activation<F, Ix4>,
}

impl<F: Scalar> NormAct<F> {
    pub(crate) fn new(prefix: &str, channels: usize) -> Self {
        Self {
            norm: GroupNorm::new(prefix, GroupNorm::<F>::default_groups(channels), channels),
            act: Activation::relu(),
        }
    }

    pub(crate) fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        let y = self.norm.forward(x);
        self.act.forward(&y)
    }

    pub(crate) fn backward(&mut self, dy: &Array4<F>, mode: Backprop) -> Array4<F> {
        let d = self.act.backward(dy);
        self.norm.backward(&d, mode)
    }
}

/// Residual block that keeps spatial size and channel count.
#[derive(Debug, Clone)]
pub struct IdResBlock<F> {
    pre1: NormAct<F>,
    conv1: Conv2d<F>,
    pre2: NormAct<F>,
    conv2: Conv2d<F>,
}

impl<F: Scalar> IdResBlock<F> {
    pub fn new<R: Rng>(prefix: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            pre1: NormAct::new(&scoped(prefix, "norm1"), channels),
            conv1: Conv2d::new(&scoped(prefix, "conv1"), channels, channels, 3, 1, 1, 1.0, rng),
            pre2: NormAct::new(&scoped(prefix, "norm2"), channels),
            conv2: Conv2d::new(&scoped(prefix, "conv2"), channels, channels, 3, 1, 1, 0.5, rng),
        }
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        let h = self.pre1.forward(x);
        let h = self.conv1.forward(&h);
        let h = self.pre2.forward(&h);
        self.conv2.forward(&h) + x
    }

    pub fn backward(&mut self, dy: &Array4<F>, mode: Backprop) -> Array4<F> {
        let d = self.conv2.backward(dy, mode);
        let d = self.pre2.backward(&d, mode);
        let d = self.conv1.backward(&d, mode);
        self.pre1.backward(&d, mode) + dy
    }
}

/// Residual block that halves the spatial size with stride-2 convolutions.
/// The 1x1 shortcut reads the pre-activated input.
#[derive(Debug, Clone)]
pub struct ConvResBlock<F> {
    pre1: NormAct<F>,
    conv1: Conv2d<F>,
    pre2: NormAct<F>,
    conv2: Conv2d<F>,
    shortcut: Conv2d<F>,
}

impl<F: Scalar> ConvResBlock<F> {
    pub fn new<R: Rng>(prefix: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            pre1: NormAct::new(&scoped(prefix, "norm1"), cin),
            conv1: Conv2d::new(&scoped(prefix, "conv1"), cin, cout, 3, 2, 1, 1.0, rng),
            pre2: NormAct::new(&scoped(prefix, "norm2"), cout),
            conv2: Conv2d::new(&scoped(prefix, "conv2"), cout, cout, 3, 1, 1, 0.5, rng),
            shortcut: Conv2d::new(&scoped(prefix, "shortcut"), cin, cout, 1, 2, 0, 0.7, rng),
        }
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        let a = self.pre1.forward(x);
        let h = self.conv1.forward(&a);
        let h = self.pre2.forward(&h);
        self.conv2.forward(&h) + self.shortcut.forward(&a)
    }

    pub fn backward(&mut self, dy: &Array4<F>, mode: Backprop) -> Array4<F> {
        let d = self.conv2.backward(dy, mode);
        let d = self.pre2.backward(&d, mode);
        let da = self.conv1.backward(&d, mode) + self.shortcut.backward(dy, mode);
        self.pre1.backward(&da, mode)
    }
}

/// Residual block that doubles the spatial size with stride-2 transposed
/// convolutions.
#[derive(Debug, Clone)]
pub struct ConvResBlockT<F> {
    pre1: NormAct<F>,
    conv1: ConvTranspose2d<F>,
    pre2: NormAct<F>,
    conv2: Conv2d<F>,
    shortcut: ConvTranspose2d<F>,
}

impl<F: Scalar> ConvResBlockT<F> {
    pub fn new<R: Rng>(prefix: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            pre1: NormAct::new(&scoped(prefix, "norm1"), cin),
            conv1: ConvTranspose2d::new(&scoped(prefix, "conv1"), cin, cout, 4, 2, 1, 1.0, rng),
            pre2: NormAct::new(&scoped(prefix, "norm2"), cout),
            conv2: Conv2d::new(&scoped(prefix, "conv2"), cout, cout, 3, 1, 1, 0.5, rng),
            shortcut: ConvTranspose2d::new(&scoped(prefix, "shortcut"), cin, cout, 2, 2, 0, 0.7, rng),
        }
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        let a = self.pre1.forward(x);
        let h = self.conv1.forward(&a);
        let h = self.pre2.forward(&h);
        self.conv2.forward(&h) + self.shortcut.forward(&a)
    }

    pub fn backward(&mut self, dy: &Array4<F>, mode: Backprop) -> Array4<F> {
        let d = self.conv2.backward(dy, mode);
        let d = self.pre2.backward(&d, mode);
        let da = self.conv1.backward(&d, mode) + self.shortcut.backward(dy, mode);
        self.pre1.backward(&da, mode)
    }
}

impl<F: Scalar> Parameterized<F> for NormAct<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.norm.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.norm.visit_mut(f)
    }
}

impl<F: Scalar> Parameterized<F> for IdResBlock<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.pre1.visit(f);
        self.conv1.visit(f);
        self.pre2.visit(f);
        self.conv2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.pre1.visit_mut(f);
        self.conv1.visit_mut(f);
        self.pre2.visit_mut(f);
        self.conv2.visit_mut(f);
    }
}

impl<F: Scalar> Parameterized<F> for ConvResBlock<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.pre1.visit(f);
        self.conv1.visit(f);
        self.pre2.visit(f);
        self.conv2.visit(f);
        self.shortcut.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.pre1.visit_mut(f);
        self.conv1.visit_mut(f);
        self.pre2.visit_mut(f);
        self.conv2.visit_mut(f);
        self.shortcut.visit_mut(f);
    }
}

impl<F: Scalar> Parameterized<F> for ConvResBlockT<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.pre1.visit(f);
        self.conv1.visit(f);
        self.pre2.visit(f);
        self.conv2.visit(f);
        self.shortcut.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.pre1.visit_mut(f);
        self.conv1.visit_mut(f);
        self.pre2.visit_mut(f);
        self.conv2.visit_mut(f);
        self.shortcut.visit_mut(f);
    }
}
