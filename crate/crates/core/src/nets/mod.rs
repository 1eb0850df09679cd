//! Residual encoder, residual decoder and patch discriminator.
//!
//! All three networks take NHWC image batches. The encoder has `stages`
//! stride-2 residual stages, each followed by `identity_blocks`
//! shape-preserving residual blocks, and the decoder runs the mirror image. The discriminator
//! downsamples by exactly 8 and emits one realism logit per patch.

mod blocks;

pub use blocks::{ConvResBlock, ConvResBlockT, IdResBlock};

use ndarray::{Array2, Array3, Array4, Axis, Ix4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};
use crate::math::{PosteriorParams, RealismMap};
use crate::nn::{cast, scoped, Activation, Backprop, Conv2d, GroupNorm, Linear, Param, Parameterized, Scalar};
use blocks::NormAct;

/// Encoder log-variances are clamped to `[-LOG_VAR_CLAMP, LOG_VAR_CLAMP]`.
pub const LOG_VAR_CLAMP: f64 = 20.0;

/// Geometry shared by the encoder and its mirrored decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub stages: usize,
    pub identity_blocks: usize,
    pub base_channels: usize,
    pub max_channels: usize,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.channels == 0 || self.latent_dim == 0 || self.base_channels == 0 || self.max_channels == 0 {
            return bad(format!("encoder spec has a zero size: {self:?}"));
        }
        if self.stages == 0 {
            return bad("encoder needs at least one stage".into());
        }
        let step = 1usize.checked_shl(self.stages as u32).unwrap_or(0);
        if step == 0 || self.height == 0 || self.width == 0 || !self.height.is_multiple_of(step) || !self.width.is_multiple_of(step) {
            return bad(format!(
                "image {}x{} is not divisible by 2^{} = {}",
                self.height, self.width, self.stages, step
            ));
        }
        Ok(())
    }

    /// Channel width after stage `s`.
    pub fn stage_channels(&self, s: usize) -> usize {
        (self.base_channels << (s + 1).min(20)).min(self.max_channels)
    }

    /// `(h, w, c)` of the final feature map.
    pub fn bottleneck(&self) -> (usize, usize, usize) {
        let f = 1 << self.stages;
        (self.height / f, self.width / f, self.stage_channels(self.stages - 1))
    }

    pub fn image_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.height, self.width, self.channels]
    }
}

struct Stage<B, F> {
    resample: B,
    identity: Vec<IdResBlock<F>>,
}

impl<B: Clone, F: Clone> Clone for Stage<B, F> {
    fn clone(&self) -> Self {
        Self {
            resample: self.resample.clone(),
            identity: self.identity.clone(),
        }
    }
}

fn visit_stage<F: Scalar, B: Parameterized<F>>(stage: &Stage<B, F>, f: &mut dyn FnMut(&Param<F>)) {
    stage.resample.visit(f);
    for b in &stage.identity {
        b.visit(f);
    }
}

fn visit_stage_mut<F: Scalar, B: Parameterized<F>>(stage: &mut Stage<B, F>, f: &mut dyn FnMut(&mut Param<F>)) {
    stage.resample.visit_mut(f);
    for b in &mut stage.identity {
        b.visit_mut(f);
    }
}

/// Maps images to the mean and log-variance of their posterior.
#[derive(Clone)]
pub struct Encoder<F> {
    spec: EncoderSpec,
    stem: Conv2d<F>,
    stages: Vec<Stage<ConvResBlock<F>, F>>,
    head_pre: NormAct<F>,
    mu_head: Linear<F>,
    log_var_head: Linear<F>,
    clamped: Option<Array2<bool>>,
}

impl<F: Scalar> Encoder<F> {
    pub fn new<R: Rng>(spec: &EncoderSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let p = "encoder";
        let stem = Conv2d::new(&scoped(p, "stem"), spec.channels, spec.base_channels, 3, 1, 1, 1.0, rng);
        let mut stages = Vec::with_capacity(spec.stages);
        let mut cin = spec.base_channels;
        for s in 0..spec.stages {
            let cout = spec.stage_channels(s);
            let sp = format!("{p}.stage{s}");
            let resample = ConvResBlock::new(&scoped(&sp, "down"), cin, cout, rng);
            let identity = (0..spec.identity_blocks)
                .map(|i| IdResBlock::new(&format!("{sp}.id{i}"), cout, rng))
                .collect();
            stages.push(Stage { resample, identity });
            cin = cout;
        }
        let (h, w, c) = spec.bottleneck();
        let flat = h * w * c;
        Ok(Self {
            spec: *spec,
            stem,
            stages,
            head_pre: NormAct::new(&scoped(p, "head_norm"), c),
            mu_head: Linear::new(&scoped(p, "mu"), flat, spec.latent_dim, 1.0, rng),
            log_var_head: Linear::new(&scoped(p, "log_var"), flat, spec.latent_dim, 0.1, rng),
            clamped: None,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// Raw `(mu, log_var)` with the log-variance clamped.
    pub fn forward(&mut self, x: &Array4<F>) -> Result<(Array2<F>, Array2<F>)> {
        let n = x.dim().0;
        shape_check("encoder input", &self.spec.image_shape(n), x.shape())?;
        let mut h = self.stem.forward(x);
        for stage in &mut self.stages {
            h = stage.resample.forward(&h);
            for b in &mut stage.identity {
                h = b.forward(&h);
            }
        }
        let h = self.head_pre.forward(&h);
        let flat = h.len() / n.max(1);
        let h = h.into_shape_with_order((n, flat)).expect("contiguous");
        let mu = self.mu_head.forward(&h);
        let raw = self.log_var_head.forward(&h);
        let lim = F::from_f64(LOG_VAR_CLAMP);
        self.clamped = Some(raw.mapv(|v| v < -lim || v > lim));
        let log_var = raw.mapv(|v| v.max(-lim).min(lim));
        Ok((mu, log_var))
    }

    /// Gradient with respect to the input image. Entries of `d_log_var`
    /// whose log-variance was clamped are dropped.
    pub fn backward(&mut self, d_mu: &Array2<F>, d_log_var: &Array2<F>, mode: Backprop) -> Array4<F> {
        let clamped = self.clamped.as_ref().expect("backward before forward");
        let mut d_lv = d_log_var.clone();
        d_lv.zip_mut_with(clamped, |d, &c| {
            if c {
                *d = F::zero();
            }
        });
        let dh = self.mu_head.backward(d_mu, mode) + self.log_var_head.backward(&d_lv, mode);
        let n = dh.nrows();
        let (bh, bw, bc) = self.spec.bottleneck();
        let dh = dh.into_shape_with_order((n, bh, bw, bc)).expect("contiguous");
        let mut d = self.head_pre.backward(&dh, mode);
        for stage in self.stages.iter_mut().rev() {
            for b in stage.identity.iter_mut().rev() {
                d = b.backward(&d, mode);
            }
            d = stage.resample.backward(&d, mode);
        }
        self.stem.backward(&d, mode)
    }

    /// Posterior parameters in `f64`.
    pub fn encode(&mut self, x: &Array4<F>) -> Result<PosteriorParams> {
        let (mu, log_var) = self.forward(x)?;
        PosteriorParams::new(cast(&mu), cast(&log_var))
    }
}

impl<F: Scalar> Parameterized<F> for Encoder<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.stem.visit(f);
        for s in &self.stages {
            visit_stage(s, f);
        }
        self.head_pre.visit(f);
        self.mu_head.visit(f);
        self.log_var_head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.stem.visit_mut(f);
        for s in &mut self.stages {
            visit_stage_mut(s, f);
        }
        self.head_pre.visit_mut(f);
        self.mu_head.visit_mut(f);
        self.log_var_head.visit_mut(f);
    }
}

/// Maps latent vectors to images in `[-1, 1]`.
#[derive(Clone)]
pub struct Decoder<F> {
    spec: EncoderSpec,
    fc: Linear<F>,
    stages: Vec<Stage<ConvResBlockT<F>, F>>,
    out_pre: NormAct<F>,
    out_conv: Conv2d<F>,
    out_act: Activation<F, Ix4>,
}

impl<F: Scalar> Decoder<F> {
    pub fn new<R: Rng>(spec: &EncoderSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let p = "decoder";
        let (h, w, c) = spec.bottleneck();
        let fc = Linear::new(&scoped(p, "fc"), spec.latent_dim, h * w * c, 1.0, rng);
        let mut stages = Vec::with_capacity(spec.stages);
        for s in (0..spec.stages).rev() {
            let cin = spec.stage_channels(s);
            let cout = if s == 0 { spec.base_channels } else { spec.stage_channels(s - 1) };
            let sp = format!("{p}.stage{s}");
            let identity = (0..spec.identity_blocks)
                .map(|i| IdResBlock::new(&format!("{sp}.id{i}"), cin, rng))
                .collect();
            let resample = ConvResBlockT::new(&scoped(&sp, "up"), cin, cout, rng);
            stages.push(Stage { resample, identity });
        }
        Ok(Self {
            spec: *spec,
            fc,
            stages,
            out_pre: NormAct::new(&scoped(p, "out_norm"), spec.base_channels),
            out_conv: Conv2d::new(&scoped(p, "out"), spec.base_channels, spec.channels, 3, 1, 1, 0.5, rng),
            out_act: Activation::tanh(),
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn forward(&mut self, z: &Array2<F>) -> Result<Array4<F>> {
        let n = z.nrows();
        shape_check("decoder input", &[n, self.spec.latent_dim], z.shape())?;
        let (bh, bw, bc) = self.spec.bottleneck();
        let mut h = self
            .fc
            .forward(z)
            .into_shape_with_order((n, bh, bw, bc))
            .expect("contiguous");
        for stage in &mut self.stages {
            for b in &mut stage.identity {
                h = b.forward(&h);
            }
            h = stage.resample.forward(&h);
        }
        let h = self.out_pre.forward(&h);
        let h = self.out_conv.forward(&h);
        Ok(self.out_act.forward(&h))
    }

    /// Gradient with respect to the latent input.
    pub fn backward(&mut self, dx: &Array4<F>, mode: Backprop) -> Array2<F> {
        let d = self.out_act.backward(dx);
        let d = self.out_conv.backward(&d, mode);
        let mut d = self.out_pre.backward(&d, mode);
        for stage in self.stages.iter_mut().rev() {
            d = stage.resample.backward(&d, mode);
            for b in stage.identity.iter_mut().rev() {
                d = b.backward(&d, mode);
            }
        }
        let n = d.dim().0;
        let flat = d.len() / n.max(1);
        let d = d.into_shape_with_order((n, flat)).expect("contiguous");
        self.fc.backward(&d, mode)
    }

    /// Decodes `f64` latents.
    pub fn decode(&mut self, z: &Array2<f64>) -> Result<Array4<F>> {
        self.forward(&cast(z))
    }
}

impl<F: Scalar> Parameterized<F> for Decoder<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.fc.visit(f);
        for s in &self.stages {
            visit_stage(s, f);
        }
        self.out_pre.visit(f);
        self.out_conv.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.fc.visit_mut(f);
        for s in &mut self.stages {
            visit_stage_mut(s, f);
        }
        self.out_pre.visit_mut(f);
        self.out_conv.visit_mut(f);
    }
}

/// Encoder and decoder updated together by one optimizer.
#[derive(Clone)]
pub struct Generator<F> {
    pub encoder: Encoder<F>,
    pub decoder: Decoder<F>,
}

impl<F: Scalar> Generator<F> {
    pub fn new<R: Rng>(spec: &EncoderSpec, rng: &mut R) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::new(spec, rng)?,
            decoder: Decoder::new(spec, rng)?,
        })
    }
}

impl<F: Scalar> Parameterized<F> for Generator<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.encoder.visit(f);
        self.decoder.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub channels: usize,
    pub base_channels: usize,
    pub max_channels: usize,
}

const DISC_SLOPE: f64 = 0.2;

/// Patch discriminator: three stride-2 4x4 convolutions with leaky ReLU,
/// then a 3x3 projection to one logit per patch.
#[derive(Clone)]
pub struct Discriminator<F> {
    spec: DiscriminatorSpec,
    convs: Vec<Conv2d<F>>,
    norms: Vec<Option<GroupNorm<F>>>,
    acts: Vec<Activation<F, Ix4>>,
    head: Conv2d<F>,
}

impl<F: Scalar> Discriminator<F> {
    pub fn new<R: Rng>(spec: &DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        if spec.channels == 0 || spec.base_channels == 0 || spec.max_channels == 0 {
            return Err(Error::InvalidArgument(format!("discriminator spec has a zero size: {spec:?}")));
        }
        let p = "discriminator";
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut cin = spec.channels;
        for i in 0..3 {
            let cout = (spec.base_channels << i).min(spec.max_channels);
            convs.push(Conv2d::new(&format!("{p}.conv{i}"), cin, cout, 4, 2, 1, 1.0, rng));
            norms.push((i > 0).then(|| GroupNorm::new(&format!("{p}.norm{i}"), GroupNorm::<F>::default_groups(cout), cout)));
            cin = cout;
        }
        Ok(Self {
            spec: *spec,
            convs,
            norms,
            acts: (0..3).map(|_| Activation::leaky_relu(DISC_SLOPE)).collect(),
            head: Conv2d::new(&scoped(p, "head"), cin, 1, 3, 1, 1, 0.5, rng),
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    /// Patch logits shaped `(batch, H/8, W/8)`.
    pub fn forward(&mut self, x: &Array4<F>) -> Result<Array3<F>> {
        let (n, h, w, c) = x.dim();
        if c != self.spec.channels {
            return Err(Error::Shape {
                name: "discriminator input",
                expected: vec![n, h, w, self.spec.channels],
                actual: x.shape().to_vec(),
            });
        }
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "discriminator input {h}x{w} is not divisible by 8"
            )));
        }
        let mut y = x.clone();
        for ((conv, norm), act) in self.convs.iter_mut().zip(&mut self.norms).zip(&mut self.acts) {
            y = conv.forward(&y);
            if let Some(norm) = norm {
                y = norm.forward(&y);
            }
            y = act.forward(&y);
        }
        let y = self.head.forward(&y);
        Ok(y.index_axis_move(Axis(3), 0))
    }

    /// Gradient with respect to the input image.
    pub fn backward(&mut self, d_logits: &Array3<F>, mode: Backprop) -> Array4<F> {
        let d = d_logits.clone().insert_axis(Axis(3));
        let mut d = self.head.backward(&d, mode);
        for ((conv, norm), act) in self.convs.iter_mut().zip(&mut self.norms).zip(&self.acts).rev() {
            d = act.backward(&d);
            if let Some(norm) = norm {
                d = norm.backward(&d, mode);
            }
            d = conv.backward(&d, mode);
        }
        d
    }

    pub fn discriminate(&mut self, x: &Array4<F>) -> Result<RealismMap> {
        Ok(RealismMap::from_logits(cast(&self.forward(x)?)))
    }
}

impl<F: Scalar> Parameterized<F> for Discriminator<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            conv.visit(f);
            if let Some(n) = norm {
                n.visit(f);
            }
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        for (conv, norm) in self.convs.iter_mut().zip(&mut self.norms) {
            conv.visit_mut(f);
            if let Some(n) = norm {
                n.visit_mut(f);
            }
        }
        self.head.visit_mut(f);
    }
}
