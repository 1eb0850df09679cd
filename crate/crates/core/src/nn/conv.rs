use ndarray::{Array1, Array2, Array4, Axis, Ix1, Ix2};
use rand::Rng;

use super::{scoped, Backprop, Param, Parameterized, Scalar};

/// Output extent of a convolution along one axis.
fn out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(len + 2 * pad >= k, "kernel {k} larger than padded input {len}+2*{pad}");
    (len + 2 * pad - k) / stride + 1
}

/// Unfolds `k x k` patches of an NHWC tensor into rows.
///
/// Row `(n, oy, ox)` holds the patch feeding output pixel `(oy, ox)` of
/// image `n`, laid out `(ky, kx, c)`. Out-of-bounds taps are zero.
pub fn im2col<F: Scalar>(x: &Array4<F>, k: usize, stride: usize, pad: usize) -> Array2<F> {
    let (n, h, w, c) = x.dim();
    let (ho, wo) = (out_len(h, k, stride, pad), out_len(w, k, stride, pad));
    let row_len = k * k * c;
    let mut cols = Array2::zeros((n * ho * wo, row_len));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("fresh array");
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * row_len;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * w + ix as usize) * c;
                        let dst = row + (ky * k + kx) * c;
                        cs[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch rows back onto an `(n, h, w, c)`
/// tensor, summing overlaps.
pub fn col2im<F: Scalar>(cols: &Array2<F>, dims: (usize, usize, usize, usize), k: usize, stride: usize, pad: usize) -> Array4<F> {
    let (n, h, w, c) = dims;
    let (ho, wo) = (out_len(h, k, stride, pad), out_len(w, k, stride, pad));
    let row_len = k * k * c;
    assert_eq!(cols.dim(), (n * ho * wo, row_len), "col2im: column matrix shape");
    let mut x = Array4::zeros(dims);
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let xs = x.as_slice_mut().expect("fresh array");
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * row_len;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                        let src = row + (ky * k + kx) * c;
                        for (d, &s) in xs[dst..dst + c].iter_mut().zip(&cs[src..src + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}

fn flatten_rows<F: Scalar>(x: &Array4<F>) -> Array2<F> {
    let (n, h, w, c) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n * h * w, c))
        .expect("contiguous")
}

fn sum_rows<F: Scalar>(m: &Array2<F>) -> Array1<F> {
    m.sum_axis(Axis(0))
}

/// 2-D convolution over NHWC input with square kernels.
/// im2col columns and the input's `(n, h, w, c)`.
type ConvCache<F> = Option<(Array2<F>, (usize, usize, usize, usize))>;

#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    weight: Param<F>,
    bias: Param<F>,
    kernel: usize,
    stride: usize,
    pad: usize,
    in_channels: usize,
    out_channels: usize,
    cache: ConvCache<F>,
}

impl<F: Scalar> Conv2d<F> {
    /// He-normal weights scaled by `gain`, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * kernel * in_channels;
        let std = gain * (2.0 / fan_in as f64).sqrt();
        Self {
            weight: Param::normal(scoped(prefix, "weight"), &[fan_in, out_channels], std, rng),
            bias: Param::zeros(scoped(prefix, "bias"), &[out_channels]),
            kernel,
            stride,
            pad,
            in_channels,
            out_channels,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        let (n, h, w, c) = x.dim();
        assert_eq!(c, self.in_channels, "{}: input channels", self.weight.name);
        let (ho, wo) = (
            out_len(h, self.kernel, self.stride, self.pad),
            out_len(w, self.kernel, self.stride, self.pad),
        );
        let cols = im2col(x, self.kernel, self.stride, self.pad);
        let weight = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let bias = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut y = cols.dot(&weight);
        y += &bias;
        self.cache = Some((cols, (n, h, w, c)));
        y.into_shape_with_order((n, ho, wo, self.out_channels)).expect("contiguous")
    }

    pub fn backward(&mut self, dy: &Array4<F>, mode: Backprop) -> Array4<F> {
        let (cols, dims) = self.cache.as_ref().expect("backward before forward");
        let (n, ho, wo, co) = dy.dim();
        let dy2 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * ho * wo, co))
            .expect("contiguous");
        if mode.params() {
            let dw = cols.t().dot(&dy2);
            self.weight.grad += &dw.into_dyn();
            self.bias.grad += &sum_rows(&dy2).into_dyn();
        }
        let weight = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let dcols = dy2.dot(&weight.t());
        col2im(&dcols, *dims, self.kernel, self.stride, self.pad)
    }
}

impl<F: Scalar> Parameterized<F> for Conv2d<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Transposed convolution: the adjoint of [`Conv2d`] with the same kernel,
/// stride and padding. Output extent is `(len - 1) * stride - 2 * pad + kernel`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F> {
    weight: Param<F>,
    bias: Param<F>,
    kernel: usize,
    stride: usize,
    pad: usize,
    in_channels: usize,
    out_channels: usize,
    cache: Option<Array2<F>>,
}

impl<F: Scalar> ConvTranspose2d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        // each output pixel receives about in_channels * (kernel / stride)^2 taps
        let taps = (kernel * kernel * in_channels) as f64 / (stride * stride) as f64;
        let std = gain * (2.0 / taps.max(1.0)).sqrt();
        Self {
            weight: Param::normal(
                scoped(prefix, "weight"),
                &[in_channels, kernel * kernel * out_channels],
                std,
                rng,
            ),
            bias: Param::zeros(scoped(prefix, "bias"), &[out_channels]),
            kernel,
            stride,
            pad,
            in_channels,
            out_channels,
            cache: None,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        ((len - 1) * self.stride + self.kernel)
            .checked_sub(2 * self.pad)
            .expect("transposed conv output would be empty")
    }

    pub fn forward(&mut self, x: &Array4<F>) -> Array4<F> {
        let (n, h, w, c) = x.dim();
        assert_eq!(c, self.in_channels, "{}: input channels", self.weight.name);
        let (ho, wo) = (self.out_len(h), self.out_len(w));
        let x2 = flatten_rows(x);
        let weight = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let cols = x2.dot(&weight);
        let mut y = col2im(&cols, (n, ho, wo, self.out_channels), self.kernel, self.stride, self.pad);
        let bias = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        y += &bias;
        self.cache = Some(x2);
        y
    }

    pub fn backward(&mut self, dy: &Array4<F>, mode: Backprop) -> Array4<F> {
        let x2 = self.cache.as_ref().expect("backward before forward");
        let (n, ho, wo, _) = dy.dim();
        let dcols = im2col(dy, self.kernel, self.stride, self.pad);
        let h = out_len(ho, self.kernel, self.stride, self.pad);
        let w = out_len(wo, self.kernel, self.stride, self.pad);
        if mode.params() {
            self.weight.grad += &x2.t().dot(&dcols).into_dyn();
            let dy2 = flatten_rows(dy);
            self.bias.grad += &sum_rows(&dy2).into_dyn();
        }
        let weight = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        dcols
            .dot(&weight.t())
            .into_shape_with_order((n, h, w, self.in_channels))
            .expect("contiguous")
    }
}

impl<F: Scalar> Parameterized<F> for ConvTranspose2d<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
