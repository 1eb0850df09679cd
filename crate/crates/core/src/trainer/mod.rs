//! Alternating generator / discriminator optimisation.
//!
//! One [`train_step`] encodes the batch, samples latents, decodes, scores
//! the reconstruction with the discriminator, takes an Adam step on the
//! encoder and decoder, and then takes an Adam step on the discriminator
//! using the same batch and the reconstruction produced before the
//! generator update.

mod checkpoint;
mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metrics::{read_log, MetricsLog, MetricsRecord, StepMetrics};

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, s, Array2, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, TrainConfig};
use crate::data::{load_split, EpochCursor};
use crate::error::{Error, Result};
use crate::math::{
    batch_posterior_stats, discriminator_objective, generator_objective, kl_global_floored, kl_individual,
    standard_objective, PosteriorParams, RealismMap,
};
use crate::nets::{Discriminator, Generator};
use crate::nn::{cast, Adam, Backprop, Parameterized};
use crate::sampler::GaussianSampler;

/// Everything needed to continue training bit-for-bit.
#[derive(Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Completed steps.
    pub step: u64,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub generator_opt: Adam<f32>,
    pub discriminator_opt: Adam<f32>,
    pub sampler: GaussianSampler,
    pub cursor: EpochCursor,
}

const INIT_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;

impl TrainState {
    /// Fresh networks initialised from `config.seed`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let generator = Generator::new(&config.encoder_spec(), &mut rng)?;
        let discriminator = Discriminator::new(&config.discriminator_spec(), &mut rng)?;
        Ok(Self {
            config: config.clone(),
            step: 0,
            generator,
            discriminator,
            generator_opt: Adam::new(config.adam()),
            discriminator_opt: Adam::new(config.adam()),
            sampler: GaussianSampler::with_stream(config.seed, SAMPLER_STREAM),
            cursor: EpochCursor::new(config.seed),
        })
    }
}

/// What the generator phase hands to the discriminator phase.
pub struct GeneratorPhase {
    pub metrics: StepMetrics,
    /// Reconstruction computed before the generator update.
    pub x_hat: Array4<f32>,
}

fn check_finite(step: u64, terms: &[(&str, Option<f64>)]) -> Result<()> {
    let dump = || {
        terms
            .iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={v}")))
            .collect::<Vec<_>>()
            .join(", ")
    };
    for (name, value) in terms {
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    term: name.to_string(),
                    value: *v,
                    dump: dump(),
                });
            }
        }
    }
    Ok(())
}

/// Diagnostic latent statistics shared by every mode.
fn latent_summary(params: &PosteriorParams, z: &Array2<f64>, floor: f64) -> Result<(f64, f64, f64, f64, f64, usize)> {
    let stats = batch_posterior_stats(params.mu().view(), z.view())?;
    let (kl_g, clamped) = kl_global_floored(&stats, floor);
    let ind = params.variance().mean_axis(Axis(0)).expect("non-empty batch");
    let min = |a: &ndarray::Array1<f64>| a.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((
        kl_g,
        min(&stats.variance),
        stats.variance.mean().unwrap_or(0.0),
        min(&ind),
        ind.mean().unwrap_or(0.0),
        clamped.iter().filter(|&&c| c).count(),
    ))
}

/// Encoder and decoder update. Leaves discriminator parameter gradients
/// untouched.
pub fn generator_phase(state: &mut TrainState, x: &Array4<f32>) -> Result<GeneratorPhase> {
    let cfg = state.config.clone();
    let spec = cfg.encoder_spec();
    crate::error::shape_check("batch", &spec.image_shape(x.dim().0), x.shape())?;
    let step = state.step + 1;
    let lr = cfg.lr_at(state.step);
    let w = cfg.weights();
    let floor = cfg.objective_options().variance_floor.unwrap_or(1e-8);
    let gen = &mut state.generator;
    gen.zero_grad();

    let (mu, log_var) = gen.encoder.forward(x)?;
    let params = PosteriorParams::new(cast(&mu), cast(&log_var))?;
    let latent = state.sampler.sample(&params);
    let z = latent.z().clone();
    let x_hat = gen.decoder.forward(&cast(&z))?;
    let x64: Array4<f64> = cast(x);
    let x_hat64: Array4<f64> = cast(&x_hat);
    let (kl_g_diag, bvar_min, bvar_mean, ivar_min, ivar_mean, clamped) = latent_summary(&params, &z, floor)?;

    let (metrics, d_xhat, d_z, d_mu, d_lv) = match cfg.mode {
        Mode::Proposed => {
            let realism = if w.beta4 > 0.0 {
                state.discriminator.discriminate(&x_hat)?
            } else {
                RealismMap::constant((x.dim().0, cfg.height / 8, cfg.width / 8), 0.5)
            };
            let (loss, g) = generator_objective(
                x64.view(),
                x_hat64.view(),
                &params,
                z.view(),
                &realism,
                &w,
                &cfg.objective_options(),
            )?;
            let t = loss.terms;
            check_finite(
                step,
                &[
                    ("kl_global", Some(t.kl_global)),
                    ("kl_individual", Some(t.kl_individual)),
                    ("l1", Some(t.l1)),
                    ("adversarial", Some(t.adversarial)),
                    ("total", Some(loss.total)),
                ],
            )?;
            let mut d_xhat: Array4<f32> = cast(&g.x_hat);
            if w.beta4 > 0.0 {
                d_xhat += &state.discriminator.backward(&cast(&g.realism), Backprop::InputOnly);
            }
            let m = StepMetrics {
                step,
                lr,
                total: loss.total,
                kl_global: t.kl_global,
                kl_individual: t.kl_individual,
                l1: t.l1,
                adversarial: Some(t.adversarial),
                kl_standard: None,
                disc_loss: None,
                batch_var_min: bvar_min,
                batch_var_mean: bvar_mean,
                ind_var_min: ivar_min,
                ind_var_mean: ivar_mean,
                clamped_dims: clamped,
            };
            (m, d_xhat, g.z, g.mu, g.log_var)
        }
        Mode::StandardVae | Mode::BetaVae => {
            let (loss, g) = standard_objective(x64.view(), x_hat64.view(), &params, &w)?;
            let kl_i = kl_individual(&params);
            check_finite(
                step,
                &[
                    ("kl_standard", Some(loss.kl)),
                    ("l1", Some(loss.l1)),
                    ("total", Some(loss.total)),
                ],
            )?;
            let m = StepMetrics {
                step,
                lr,
                total: loss.total,
                kl_global: kl_g_diag,
                kl_individual: kl_i,
                l1: loss.l1,
                adversarial: None,
                kl_standard: Some(loss.kl),
                disc_loss: None,
                batch_var_min: bvar_min,
                batch_var_mean: bvar_mean,
                ind_var_min: ivar_min,
                ind_var_mean: ivar_mean,
                clamped_dims: clamped,
            };
            let zeros = Array2::zeros(z.raw_dim());
            (m, cast(&g.x_hat), zeros, g.mu, g.log_var)
        }
    };

    let dz_dec: Array2<f64> = cast(&gen.decoder.backward(&d_xhat, Backprop::Full));
    let (pm, pl) = latent.pullback((dz_dec + &d_z).view())?;
    let d_mu = pm + &d_mu;
    let d_lv = pl + &d_lv;
    gen.encoder.backward(&cast(&d_mu), &cast(&d_lv), Backprop::Full);
    state.generator_opt.set_lr(lr);
    state.generator_opt.step(gen);
    Ok(GeneratorPhase { metrics, x_hat })
}

/// Discriminator update on the real batch and the detached reconstruction.
/// Returns the discriminator loss.
pub fn discriminator_phase(state: &mut TrainState, x: &Array4<f32>, x_hat: &Array4<f32>) -> Result<f64> {
    let w = state.config.weights();
    let n = x.dim().0;
    let disc = &mut state.discriminator;
    disc.zero_grad();
    let both = concatenate![Axis(0), x.view(), x_hat.view()];
    let logits: ndarray::Array3<f64> = cast(&disc.forward(&both)?);
    let real = RealismMap::from_logits(logits.slice(s![..n, .., ..]).to_owned());
    let fake = RealismMap::from_logits(logits.slice(s![n.., .., ..]).to_owned());
    let (loss, g) = discriminator_objective(&real, &fake, &w)?;
    check_finite(state.step + 1, &[("disc_loss", Some(loss))])?;
    let d = concatenate![Axis(0), g.real, g.fake];
    disc.backward(&cast(&d), Backprop::Full);
    state.discriminator_opt.set_lr(state.config.lr_at(state.step));
    state.discriminator_opt.step(disc);
    Ok(loss)
}

/// One full training step. The discriminator step is skipped when it
/// cannot change anything: outside `proposed` mode or with `beta4 = 0`.
pub fn train_step(state: &mut TrainState, x: &Array4<f32>) -> Result<StepMetrics> {
    let GeneratorPhase { mut metrics, x_hat } = generator_phase(state, x)?;
    if state.config.mode.uses_discriminator() && state.config.beta4 > 0.0 {
        metrics.disc_loss = Some(discriminator_phase(state, x, &x_hat)?);
    }
    state.step += 1;
    Ok(metrics)
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<StepMetrics>,
    pub final_checkpoint: PathBuf,
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("step_{step:08}.ckpt"))
}

/// Runs steps until `config.max_steps`, appending to `metrics.jsonl` and
/// writing checkpoints into `config.out_dir`.
///
/// When resuming, the checkpoint's configuration is used except for
/// `max_steps`, `checkpoint_every` and `out_dir`, which come from `config`.
pub fn train(
    config: &TrainConfig,
    resume: Option<&Path>,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut state = match resume {
        Some(path) => {
            let mut s = load_checkpoint(path)?;
            s.config.max_steps = config.max_steps;
            s.config.checkpoint_every = config.checkpoint_every;
            s.config.out_dir = config.out_dir.clone();
            s
        }
        None => TrainState::new(config)?,
    };
    let (train_set, _) = load_split(&state.config.dataset_spec())?;
    let out_dir = state.config.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.toml"), state.config.to_toml())?;
    let mut log = MetricsLog::append(&out_dir.join("metrics.jsonl"))?;
    let start = Instant::now();
    let mut metrics = Vec::new();
    let (b, every) = (state.config.batch_size, state.config.checkpoint_every);
    while state.step < state.config.max_steps {
        let idx = state.cursor.next_batch(train_set.len(), b)?;
        let x = train_set.batch(&idx)?;
        let m = train_step(&mut state, &x)?;
        log.write(&m, start.elapsed().as_secs_f64())?;
        on_step(&m);
        metrics.push(m);
        if every > 0 && state.step % every == 0 {
            save_checkpoint(&state, &checkpoint_path(&out_dir, state.step))?;
        }
    }
    log.flush()?;
    let final_checkpoint = out_dir.join("final.ckpt");
    save_checkpoint(&state, &final_checkpoint)?;
    Ok(TrainOutcome {
        state,
        metrics,
        final_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_split;
    use crate::nn::Param;

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            height: 16,
            width: 16,
            latent_dim: 4,
            stages: 2,
            identity_blocks: 1,
            base_channels: 4,
            max_channels: 16,
            disc_base_channels: 4,
            batch_size: 4,
            train_count: 16,
            test_count: 4,
            max_steps: 6,
            checkpoint_every: 3,
            ..TrainConfig::default()
        }
    }

    fn batch(cfg: &TrainConfig) -> Array4<f32> {
        let (train, _) = load_split(&cfg.dataset_spec()).unwrap();
        train.batch(&[0, 1, 2, 3]).unwrap()
    }

    fn snapshot(p: &impl Parameterized<f32>) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        p.visit(&mut |q: &Param<f32>| out.push((q.name.clone(), q.value.iter().copied().collect())));
        out
    }

    #[test]
    fn logged_total_is_weighted_sum_of_terms() {
        let cfg = tiny_config();
        let mut st = TrainState::new(&cfg).unwrap();
        let m = train_step(&mut st, &batch(&cfg)).unwrap();
        let w = cfg.weights();
        let sum = w.beta1 * m.kl_global + w.beta2 * m.kl_individual + w.beta3 * m.l1 + w.beta4 * m.adversarial.unwrap();
        assert!((sum - m.total).abs() <= 1e-6 * m.total.abs());
        assert!(m.disc_loss.is_some());
        assert_eq!(st.step, 1);
    }

    #[test]
    fn generator_phase_never_writes_discriminator_gradients() {
        let cfg = tiny_config();
        let mut st = TrainState::new(&cfg).unwrap();
        let x = batch(&cfg);
        let before = snapshot(&st.discriminator);
        st.discriminator.zero_grad();
        let phase = generator_phase(&mut st, &x).unwrap();
        st.discriminator.visit(&mut |p| assert!(p.grad.iter().all(|&g| g == 0.0), "{}", p.name));
        assert_eq!(snapshot(&st.discriminator), before);

        let gen_before = snapshot(&st.generator);
        st.generator.zero_grad();
        discriminator_phase(&mut st, &x, &phase.x_hat).unwrap();
        st.generator.visit(&mut |p| assert!(p.grad.iter().all(|&g| g == 0.0), "{}", p.name));
        assert_eq!(snapshot(&st.generator), gen_before);
        assert_ne!(snapshot(&st.discriminator), before);
    }

    #[test]
    fn standard_mode_total() {
        let cfg = TrainConfig {
            mode: Mode::StandardVae,
            beta1: 1.0,
            beta2: 1.0,
            ..tiny_config()
        };
        let mut st = TrainState::new(&cfg).unwrap();
        let before = snapshot(&st.discriminator);
        let m = train_step(&mut st, &batch(&cfg)).unwrap();
        assert!((m.total - (m.kl_standard.unwrap() + m.l1)).abs() < 1e-9 * m.total.abs());
        assert!(m.adversarial.is_none() && m.disc_loss.is_none());
        assert_eq!(snapshot(&st.discriminator), before);
    }

    #[test]
    fn wrong_batch_shape_is_rejected() {
        let cfg = tiny_config();
        let mut st = TrainState::new(&cfg).unwrap();
        assert!(matches!(
            train_step(&mut st, &Array4::zeros((4, 8, 16, 3))),
            Err(Error::Shape { .. })
        ));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn non_finite_input_aborts_with_term_dump() {
        let cfg = tiny_config();
        let mut st = TrainState::new(&cfg).unwrap();
        let mut x = batch(&cfg);
        x[[0, 0, 0, 0]] = f32::NAN;
        match train_step(&mut st, &x) {
            Err(Error::NonFinite { term, dump, .. }) => {
                assert!(!term.is_empty());
                assert!(dump.contains("l1="));
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("NaN input must abort"),
        }
    }

    #[test]
    fn train_writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            out_dir: dir.path().to_path_buf(),
            ..tiny_config()
        };
        let mut seen = 0;
        let out = train(&cfg, None, |_| seen += 1).unwrap();
        assert_eq!(seen, 6);
        assert_eq!(out.state.step, 6);
        assert!(checkpoint_path(dir.path(), 3).exists());
        assert!(checkpoint_path(dir.path(), 6).exists());
        assert!(out.final_checkpoint.exists());
        let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        let records: Vec<MetricsRecord> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len(), 6);
        assert_eq!(records[5].metrics, out.metrics[5]);
        let echoed = TrainConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(echoed, cfg);
    }
}
