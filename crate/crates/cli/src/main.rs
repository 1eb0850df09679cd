use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mixvae::config::{Mode, TrainConfig};
use mixvae::data::{load_split, Dataset};
use mixvae::experiments::{
    self, plot, CollapseOptions, HistogramSpec, InterpolationSpec, LatentChoice, Manifest, VariationSpec,
};
use mixvae::nets::Generator;
use mixvae::sampler::GaussianSampler;
use mixvae::trainer::{load_checkpoint, train};

#[derive(Parser)]
#[command(name = "mixvae", version, about = "Mixture-posterior VAE-GAN training and latent-space studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config, optionally resuming a checkpoint.
    Train(TrainArgs),
    /// Decode a grid of offsets along two latent entries of one test image.
    Vary(VaryArgs),
    /// Decode convex combinations of two test images' latents.
    Interpolate(InterpolateArgs),
    /// Joint and marginal histograms of two latent entries over the test set.
    Histogram(HistogramArgs),
    /// Per-dimension activity and bimodality over the test set.
    CollapseReport(CollapseArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Image directory or `synthetic`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print metrics every this many steps.
    #[arg(long, default_value_t = 50)]
    log_every: u64,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the dataset recorded in the checkpoint.
    #[arg(long)]
    data: Option<String>,
}

#[derive(Args)]
struct VaryArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    image: usize,
    /// The two latent entries to vary, e.g. `3,7`.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1])]
    dims: Vec<usize>,
    /// Offsets in posterior standard deviations.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-2.0, -1.0, 0.0, 1.0, 2.0])]
    deltas: Vec<f64>,
    #[arg(long, default_value_t = LatentChoice::Sample)]
    latent: LatentChoice,
}

#[derive(Args)]
struct InterpolateArgs {
    #[command(flatten)]
    common: Common,
    /// Two test-image indices, e.g. `0,5`.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1])]
    pair: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, default_value_t = LatentChoice::Sample)]
    latent: LatentChoice,
}

#[derive(Args)]
struct HistogramArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-4.0, 4.0])]
    range: Vec<f64>,
}

#[derive(Args)]
struct CollapseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.01)]
    active_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    min_separation: f64,
    /// Limit the number of test images.
    #[arg(long)]
    images: Option<usize>,
}

fn pair<T: Copy>(v: &[T], flag: &str) -> Result<(T, T)> {
    match v {
        [a, b] => Ok((*a, *b)),
        _ => bail!("--{flag} takes exactly two comma-separated values, got {}", v.len()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => run_train(a),
        Command::Vary(a) => run_vary(a),
        Command::Interpolate(a) => run_interpolate(a),
        Command::Histogram(a) => run_histogram(a),
        Command::CollapseReport(a) => run_collapse(a),
    }
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = a.mode {
        cfg.mode = mode;
    }
    if let Some(data) = a.data {
        cfg.data = data;
    }
    if let Some(n) = a.max_steps {
        cfg.max_steps = n;
    }
    if let Some(out) = a.out {
        cfg.out_dir = out;
    }
    if a.resume.is_some() && (a.seed.is_some() || a.mode.is_some()) {
        eprintln!("note: --seed and --mode are ignored when resuming; the checkpoint's values apply");
    }
    let every = a.log_every.max(1);
    let outcome = train(&cfg, a.resume.as_deref(), |m| {
        if m.step % every == 0 {
            println!(
                "step {:>7}  total {:.4}  klg {:.4}  kli {:.4}  l1 {:.4}  adv {}  disc {}  var_min {:.4}",
                m.step,
                m.total,
                m.kl_global,
                m.kl_individual,
                m.l1,
                m.adversarial.map_or("-".into(), |v| format!("{v:.4}")),
                m.disc_loss.map_or("-".into(), |v| format!("{v:.4}")),
                m.ind_var_min,
            );
        }
    })?;
    println!("final checkpoint: {}", outcome.final_checkpoint.display());
    Ok(())
}

struct Loaded {
    generator: Generator<f32>,
    test: Dataset,
}

fn load(common: &Common) -> Result<Loaded> {
    let state = load_checkpoint(&common.checkpoint)
        .with_context(|| format!("loading {}", common.checkpoint.display()))?;
    let mut cfg = state.config.clone();
    if let Some(d) = &common.data {
        cfg.data = d.clone();
    }
    let (_, test) = load_split(&cfg.dataset_spec())?;
    std::fs::create_dir_all(&common.out)?;
    Ok(Loaded {
        generator: state.generator,
        test,
    })
}

fn test_image(test: &Dataset, i: usize) -> Result<ndarray::Array3<f32>> {
    if i >= test.len() {
        bail!("test image {i} out of range ({} images)", test.len());
    }
    Ok(test.get(i)?)
}

fn save_png(img: &image::RgbImage, dir: &Path, name: &str, outputs: &mut Vec<String>) -> Result<()> {
    img.save(dir.join(name)).with_context(|| format!("writing {name}"))?;
    outputs.push(name.to_string());
    Ok(())
}

fn finish(common: &Common, command: &str, parameters: serde_json::Value, outputs: Vec<String>) -> Result<()> {
    let manifest = Manifest {
        command: command.into(),
        checkpoint: common.checkpoint.clone(),
        seed: common.seed,
        parameters,
        outputs,
    };
    let path = manifest.write(&common.out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_vary(a: VaryArgs) -> Result<()> {
    let mut l = load(&a.common)?;
    let x = test_image(&l.test, a.image)?;
    let spec = VariationSpec {
        image_index: a.image,
        axes: pair(&a.dims, "dims")?,
        deltas: a.deltas,
        latent: a.latent,
    };
    let mut sampler = GaussianSampler::new(a.common.seed);
    let grid = experiments::vary(&mut l.generator, x.view(), &spec, &mut sampler)?;
    let n = grid.deltas.len();
    let views: Vec<_> = grid.cells.iter().map(|c| c.view()).collect();
    let mut outputs = Vec::new();
    save_png(&plot::image_grid(&views, n, n, 2), &a.common.out, "grid.png", &mut outputs)?;
    save_png(&plot::to_rgb(x.view()), &a.common.out, "input.png", &mut outputs)?;
    save_png(&plot::to_rgb(grid.base.view()), &a.common.out, "base.png", &mut outputs)?;
    finish(
        &a.common,
        "vary",
        json!({ "spec": spec, "base_latent": grid.base_latent.to_vec(), "layout": "row = first dim delta, column = second dim delta" }),
        outputs,
    )
}

fn run_interpolate(a: InterpolateArgs) -> Result<()> {
    let mut l = load(&a.common)?;
    let spec = InterpolationSpec {
        pair: pair(&a.pair, "pair")?,
        steps: a.steps,
        latent: a.latent,
    };
    let x1 = test_image(&l.test, spec.pair.0)?;
    let x2 = test_image(&l.test, spec.pair.1)?;
    let mut sampler = GaussianSampler::new(a.common.seed);
    let strip = experiments::interpolate(&mut l.generator, x1.view(), x2.view(), &spec, &mut sampler)?;
    let mut views = vec![x1.view()];
    views.extend(strip.frames.iter().map(|f| f.view()));
    views.push(x2.view());
    let mut outputs = Vec::new();
    save_png(&plot::image_grid(&views, 1, views.len(), 2), &a.common.out, "strip.png", &mut outputs)?;
    finish(
        &a.common,
        "interpolate",
        json!({ "spec": spec, "alphas": strip.alphas, "layout": "input, frames for each alpha, input" }),
        outputs,
    )
}

fn run_histogram(a: HistogramArgs) -> Result<()> {
    let mut l = load(&a.common)?;
    let spec = HistogramSpec {
        dims: pair(&a.dims, "dims")?,
        sample_count: a.samples,
        bins: a.bins,
        range: pair(&a.range, "range")?,
    };
    let mut sampler = GaussianSampler::new(a.common.seed);
    let h = experiments::latent_histograms(&mut l.generator, &l.test, &spec, &mut sampler)?;
    let p = |xs: Vec<f64>| experiments::bimodality(&xs, 0.5);
    let (bp, bq) = (p(h.samples.column(0).to_vec()), p(h.samples.column(1).to_vec()));
    let mut outputs = Vec::new();
    save_png(
        &plot::histogram_chart(&h.joint, &h.marginal_p, &h.marginal_q, 8),
        &a.common.out,
        "histogram.png",
        &mut outputs,
    )?;
    for (name, text) in [
        ("joint.csv", experiments::joint_csv(&h)),
        ("marginals.csv", experiments::marginals_csv(&h)),
    ] {
        std::fs::write(a.common.out.join(name), text)?;
        outputs.push(name.into());
    }
    finish(
        &a.common,
        "histogram",
        json!({ "spec": spec, "total": h.total(), "bimodality": [bp, bq] }),
        outputs,
    )
}

fn run_collapse(a: CollapseArgs) -> Result<()> {
    let mut l = load(&a.common)?;
    let options = CollapseOptions {
        active_threshold: a.active_threshold,
        min_separation: a.min_separation,
        max_images: a.images,
    };
    let mut sampler = GaussianSampler::new(a.common.seed);
    let report = experiments::collapse_report(&mut l.generator, &l.test, options, &mut sampler)?;
    let mut outputs = Vec::new();
    std::fs::write(a.common.out.join("collapse.csv"), report.to_csv())?;
    outputs.push("collapse.csv".into());
    std::fs::write(a.common.out.join("collapse.json"), serde_json::to_vec_pretty(&report)?)?;
    outputs.push("collapse.json".into());
    println!(
        "{} images, {} of {} dims active, {} bimodal",
        report.images,
        report.active_count,
        report.dims.len(),
        report.bimodal_count
    );
    finish(&a.common, "collapse-report", json!({ "options": options }), outputs)
}
