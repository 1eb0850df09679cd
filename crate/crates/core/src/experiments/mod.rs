//! Latent-space studies on a trained generator: variation grids, convex
//! interpolation, joint histograms and per-dimension collapse diagnostics.
//!
//! Images are decoded one latent at a time, so an experiment cell and a
//! plain reconstruction of the same latent are bit-identical.

mod bimodal;
pub mod plot;

pub use bimodal::{bimodality, fit_one, fit_two, BimodalityTest, MixtureFit};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{batch_posterior_stats, PosteriorParams};
use crate::nets::Generator;
use crate::sampler::GaussianSampler;

/// How an image is turned into a single latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentChoice {
    /// One reparametrized draw from the posterior.
    #[default]
    Sample,
    /// The posterior mean.
    Mean,
}

impl FromStr for LatentChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Self::Sample),
            "mean" => Ok(Self::Mean),
            _ => Err(Error::InvalidArgument(format!("latent must be `sample` or `mean`, got `{s}`"))),
        }
    }
}

impl fmt::Display for LatentChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sample => "sample",
            Self::Mean => "mean",
        })
    }
}

/// Posterior of a single image.
pub fn encode_one(gen: &mut Generator<f32>, x: ArrayView3<f32>) -> Result<PosteriorParams> {
    gen.encoder.encode(&x.to_owned().insert_axis(Axis(0)))
}

pub fn decode_one(gen: &mut Generator<f32>, z: ArrayView1<f64>) -> Result<Array3<f32>> {
    let z = z.to_owned().insert_axis(Axis(0));
    Ok(gen.decoder.decode(&z)?.index_axis_move(Axis(0), 0))
}

fn pick_latent(params: &PosteriorParams, choice: LatentChoice, sampler: &mut GaussianSampler) -> Array1<f64> {
    match choice {
        LatentChoice::Mean => params.mu().row(0).to_owned(),
        LatentChoice::Sample => sampler.sample(params).into_z().row(0).to_owned(),
    }
}

/// Latent for one image.
pub fn latent_of(
    gen: &mut Generator<f32>,
    x: ArrayView3<f32>,
    choice: LatentChoice,
    sampler: &mut GaussianSampler,
) -> Result<Array1<f64>> {
    let p = encode_one(gen, x)?;
    Ok(pick_latent(&p, choice, sampler))
}

/// Encode, pick a latent, decode.
pub fn reconstruct(
    gen: &mut Generator<f32>,
    x: ArrayView3<f32>,
    choice: LatentChoice,
    sampler: &mut GaussianSampler,
) -> Result<Array3<f32>> {
    let z = latent_of(gen, x, choice, sampler)?;
    decode_one(gen, z.view())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationSpec {
    pub image_index: usize,
    pub axes: (usize, usize),
    pub deltas: Vec<f64>,
    pub latent: LatentChoice,
}

impl VariationSpec {
    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        let (a, b) = self.axes;
        if a == b {
            return Err(Error::InvalidArgument(format!("variation axes must differ, got ({a}, {b})")));
        }
        if a >= latent_dim || b >= latent_dim {
            return Err(Error::InvalidArgument(format!(
                "variation axes ({a}, {b}) out of range for latent dimension {latent_dim}"
            )));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidArgument("deltas must be a non-empty list of finite numbers".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VariationGrid {
    pub deltas: Vec<f64>,
    pub axes: (usize, usize),
    /// The frozen latent with both axes set to their posterior means.
    pub base_latent: Array1<f64>,
    /// Decode of `base_latent`.
    pub base: Array3<f32>,
    /// Row `p`, column `q` holds the image for `(deltas[p], deltas[q])`,
    /// stored row-major.
    pub cells: Vec<Array3<f32>>,
}

impl VariationGrid {
    pub fn cell(&self, p: usize, q: usize) -> &Array3<f32> {
        &self.cells[p * self.deltas.len() + q]
    }
}

/// Draws one latent for the image, then sweeps entries `a` and `b` through
/// `mu + delta * sigma` while every other entry stays fixed.
pub fn vary(
    gen: &mut Generator<f32>,
    x: ArrayView3<f32>,
    spec: &VariationSpec,
    sampler: &mut GaussianSampler,
) -> Result<VariationGrid> {
    spec.validate(gen.encoder.spec().latent_dim)?;
    let params = encode_one(gen, x)?;
    let mut base_latent = pick_latent(&params, spec.latent, sampler);
    let (a, b) = spec.axes;
    let (mu, sd) = (params.mu().row(0).to_owned(), params.std_dev().row(0).to_owned());
    base_latent[a] = mu[a];
    base_latent[b] = mu[b];
    let base = decode_one(gen, base_latent.view())?;
    let mut cells = Vec::with_capacity(spec.deltas.len().pow(2));
    for &dp in &spec.deltas {
        for &dq in &spec.deltas {
            let mut z = base_latent.clone();
            z[a] = mu[a] + dp * sd[a];
            z[b] = mu[b] + dq * sd[b];
            cells.push(decode_one(gen, z.view())?);
        }
    }
    Ok(VariationGrid {
        deltas: spec.deltas.clone(),
        axes: spec.axes,
        base_latent,
        base,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSpec {
    pub pair: (usize, usize),
    pub steps: usize,
    pub latent: LatentChoice,
}

#[derive(Debug, Clone)]
pub struct InterpolationStrip {
    pub alphas: Vec<f64>,
    /// One latent per frame.
    pub latents: Array2<f64>,
    pub frames: Vec<Array3<f32>>,
}

/// Mixing weights `k / (n - 1)` for `k = 0..n`.
pub fn alphas(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("interpolation needs at least 2 steps, got {n}")));
    }
    Ok((0..n).map(|k| k as f64 / (n - 1) as f64).collect())
}

/// Decodes `(1 - alpha) z1 + alpha z2` for evenly spaced `alpha` in `[0, 1]`.
pub fn interpolate_latents(
    gen: &mut Generator<f32>,
    z1: ArrayView1<f64>,
    z2: ArrayView1<f64>,
    steps: usize,
) -> Result<InterpolationStrip> {
    let alphas = alphas(steps)?;
    let mut latents = Array2::zeros((steps, z1.len()));
    let mut frames = Vec::with_capacity(steps);
    for (k, &t) in alphas.iter().enumerate() {
        let z = &z1 * (1.0 - t) + &z2 * t;
        frames.push(decode_one(gen, z.view())?);
        latents.row_mut(k).assign(&z);
    }
    Ok(InterpolationStrip {
        alphas,
        latents,
        frames,
    })
}

pub fn interpolate(
    gen: &mut Generator<f32>,
    x1: ArrayView3<f32>,
    x2: ArrayView3<f32>,
    spec: &InterpolationSpec,
    sampler: &mut GaussianSampler,
) -> Result<InterpolationStrip> {
    alphas(spec.steps)?;
    let z1 = latent_of(gen, x1, spec.latent, sampler)?;
    let z2 = latent_of(gen, x2, spec.latent, sampler)?;
    interpolate_latents(gen, z1.view(), z2.view(), spec.steps)
}

/// Encodes the first `count` images of `set` in chunks of `chunk` and draws
/// one latent per image. Returns `(mu, log_var, z)`.
pub fn encode_set(
    gen: &mut Generator<f32>,
    set: &Dataset,
    count: usize,
    chunk: usize,
    sampler: &mut GaussianSampler,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    if count > set.len() {
        return Err(Error::DatasetCount {
            available: set.len(),
            required: count,
        });
    }
    let d = gen.encoder.spec().latent_dim;
    let (mut mu, mut lv, mut z) = (Array2::zeros((count, d)), Array2::zeros((count, d)), Array2::zeros((count, d)));
    let idx: Vec<usize> = (0..count).collect();
    for part in idx.chunks(chunk.max(1)) {
        let x = set.batch(part)?;
        let p = gen.encoder.encode(&x)?;
        let draw = sampler.sample(&p).into_z();
        let rows = s![part[0]..part[0] + part.len(), ..];
        mu.slice_mut(rows).assign(p.mu());
        lv.slice_mut(rows).assign(p.log_var());
        z.slice_mut(rows).assign(&draw);
    }
    Ok((mu, lv, z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub dims: (usize, usize),
    pub sample_count: usize,
    pub bins: usize,
    /// Bin range; values outside fall into the end bins.
    pub range: (f64, f64),
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            dims: (0, 1),
            sample_count: 400,
            bins: 30,
            range: (-4.0, 4.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentHistogram {
    pub dims: (usize, usize),
    pub edges: Vec<f64>,
    /// `joint[[i, j]]` counts samples with `z_p` in bin `i` and `z_q` in bin `j`.
    pub joint: Array2<u64>,
    pub marginal_p: Vec<u64>,
    pub marginal_q: Vec<u64>,
    /// The `(z_p, z_q)` pairs that were binned.
    pub samples: Array2<f64>,
}

impl LatentHistogram {
    pub fn total(&self) -> u64 {
        self.joint.sum()
    }
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((v - lo) / (hi - lo) * bins as f64).floor();
    if t.is_nan() || t < 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

/// Bins pairs into a joint histogram whose marginals are its row and column
/// sums.
pub fn histogram2d(samples: Array2<f64>, dims: (usize, usize), bins: usize, range: (f64, f64)) -> Result<LatentHistogram> {
    let (lo, hi) = range;
    if bins == 0 || !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::InvalidArgument(format!("histogram needs bins > 0 and a finite range, got {bins} over {range:?}")));
    }
    let mut joint = Array2::<u64>::zeros((bins, bins));
    for row in samples.rows() {
        joint[[bin_of(row[0], lo, hi, bins), bin_of(row[1], lo, hi, bins)]] += 1;
    }
    let edges = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();
    Ok(LatentHistogram {
        dims,
        edges,
        marginal_p: joint.sum_axis(Axis(1)).to_vec(),
        marginal_q: joint.sum_axis(Axis(0)).to_vec(),
        joint,
        samples,
    })
}

/// Encodes `sample_count` test images, draws one latent each and bins the
/// chosen pair of entries.
pub fn latent_histograms(
    gen: &mut Generator<f32>,
    test: &Dataset,
    spec: &HistogramSpec,
    sampler: &mut GaussianSampler,
) -> Result<LatentHistogram> {
    let d = gen.encoder.spec().latent_dim;
    let (p, q) = spec.dims;
    if p >= d || q >= d {
        return Err(Error::InvalidArgument(format!("histogram dims ({p}, {q}) out of range for {d}")));
    }
    if spec.sample_count < 100 {
        return Err(Error::InvalidArgument(format!(
            "histograms need at least 100 samples, got {}",
            spec.sample_count
        )));
    }
    let (_, _, z) = encode_set(gen, test, spec.sample_count, 32, sampler)?;
    let pairs = ndarray::stack![Axis(1), z.column(p), z.column(q)];
    histogram2d(pairs, spec.dims, spec.bins, spec.range)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    /// A dimension is active when the variance of its posterior means
    /// across images exceeds this.
    pub active_threshold: f64,
    pub min_separation: f64,
    /// Images to use; `None` uses the whole test set.
    pub max_images: Option<usize>,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        Self {
            active_threshold: 0.01,
            min_separation: 0.5,
            max_images: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimReport {
    pub dim: usize,
    /// Mixture mean over the images.
    pub mean: f64,
    /// Mixture variance: spread of the sampled latents around `mean`.
    pub mixture_variance: f64,
    /// Average of the individual posterior variances.
    pub mean_individual_variance: f64,
    /// Variance of the posterior means across images.
    pub variance_of_means: f64,
    pub active: bool,
    pub bimodal: bool,
    pub bimodality: BimodalityTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub images: usize,
    pub options: CollapseOptions,
    pub dims: Vec<DimReport>,
    pub active_count: usize,
    pub bimodal_count: usize,
}

impl CollapseReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dim,mean,mixture_variance,mean_individual_variance,variance_of_means,active,bimodal\n",
        );
        for d in &self.dims {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                d.dim, d.mean, d.mixture_variance, d.mean_individual_variance, d.variance_of_means, d.active, d.bimodal
            ));
        }
        out
    }
}

/// Per-dimension statistics from posterior parameters and one latent draw
/// per image.
pub fn collapse_from_latents(
    mu: &Array2<f64>,
    log_var: &Array2<f64>,
    z: &Array2<f64>,
    options: CollapseOptions,
) -> Result<CollapseReport> {
    let stats = batch_posterior_stats(mu.view(), z.view())?;
    let n = mu.nrows() as f64;
    let ind = log_var.mapv(f64::exp).mean_axis(Axis(0)).expect("non-empty");
    let dims: Vec<DimReport> = (0..mu.ncols())
        .map(|j| {
            let col = mu.column(j);
            let m = col.sum() / n;
            let var_mu = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let zs: Vec<f64> = z.column(j).to_vec();
            let test = bimodality(&zs, options.min_separation);
            DimReport {
                dim: j,
                mean: stats.mean[j],
                mixture_variance: stats.variance[j],
                mean_individual_variance: ind[j],
                variance_of_means: var_mu,
                active: var_mu > options.active_threshold,
                bimodal: test.bimodal,
                bimodality: test,
            }
        })
        .collect();
    Ok(CollapseReport {
        images: mu.nrows(),
        options,
        active_count: dims.iter().filter(|d| d.active).count(),
        bimodal_count: dims.iter().filter(|d| d.bimodal).count(),
        dims,
    })
}

pub fn collapse_report(
    gen: &mut Generator<f32>,
    test: &Dataset,
    options: CollapseOptions,
    sampler: &mut GaussianSampler,
) -> Result<CollapseReport> {
    let count = options.max_images.unwrap_or(test.len()).min(test.len());
    let (mu, lv, z) = encode_set(gen, test, count, 32, sampler)?;
    collapse_from_latents(&mu, &lv, &z, options)
}

/// Record of an experiment run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub checkpoint: PathBuf,
    pub seed: u64,
    pub parameters: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

/// Joint counts as CSV: one row per bin of the first variable.
pub fn joint_csv(h: &LatentHistogram) -> String {
    let mut out = String::from("bin_p\\bin_q");
    for j in 0..h.joint.ncols() {
        out.push_str(&format!(",{j}"));
    }
    out.push('\n');
    for (i, row) in h.joint.rows().into_iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Bin edges with both marginal counts.
pub fn marginals_csv(h: &LatentHistogram) -> String {
    let mut out = String::from("bin,lower,upper,count_p,count_q\n");
    for k in 0..h.marginal_p.len() {
        out.push_str(&format!(
            "{k},{},{},{},{}\n",
            h.edges[k],
            h.edges[k + 1],
            h.marginal_p[k],
            h.marginal_q[k]
        ));
    }
    out
}
