//! Alternating adversarial optimization, discriminator pretraining,
//! checkpointing and resumption.

mod checkpoint;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{NormStats, StftParams};
use crate::bands::{build_band_layout, BandLayout};
use crate::datasets::{Corpus, Dataset, Domain};
use crate::error::{ensure, Error, Result};
use crate::losses::{
    discriminator_side, fake_batch, gen_forward, generator_side, BundleGrads, LossReport, LossVariant, ObjectiveConfig,
};
use crate::models::{
    init_parameters, BundleConfig, DiscriminatorConfig, Direction, GeneratorConfig, GeneratorMode, ModelBundle,
};
use crate::nn::{Param, Scalar};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngSnapshot, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const ADAM_EPS: f64 = 1e-8;
/// Stream of the run seed used for batch sampling and noise; parameter
/// initialization uses stream 0.
const DATA_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub cycle_weight: f64,
    pub identity_weight: f64,
    pub loss_variant: LossVariant,
    pub num_bands_x: usize,
    pub num_bands_y: usize,
    /// Explicit band widths; when set they replace the even split and must
    /// sum to the bin count.
    pub band_widths_x: Option<Vec<usize>>,
    pub band_widths_y: Option<Vec<usize>>,
    pub generator_mode: GeneratorMode,
    pub d_steps_per_g_step: usize,
    pub pretrain_d_steps: usize,
    pub learning_rate_g: f64,
    pub learning_rate_d: f64,
    /// Both learning rates fall linearly towards zero over this many final
    /// steps of `total_steps`; 0 keeps them constant.
    pub lr_decay_steps: u64,
    /// Decay of an exponential moving average of the generator weights,
    /// which adaptation and evaluation then use; 0 disables it.
    pub generator_ema: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub total_steps: u64,
    pub seed: u64,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cycle_weight: 10.0,
            identity_weight: 0.0,
            loss_variant: LossVariant::NonsaturatingBce,
            num_bands_x: 3,
            num_bands_y: 3,
            band_widths_x: None,
            band_widths_y: None,
            generator_mode: GeneratorMode::Single,
            d_steps_per_g_step: 1,
            pretrain_d_steps: 0,
            learning_rate_g: 2e-4,
            learning_rate_d: 2e-4,
            lr_decay_steps: 0,
            generator_ema: 0.0,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 1,
            crop_frames: 128,
            total_steps: 2000,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        ensure!(finite_nonneg(self.cycle_weight), InvalidArgument, "cycle_weight must be >= 0");
        ensure!(finite_nonneg(self.identity_weight), InvalidArgument, "identity_weight must be >= 0");
        ensure!(
            self.num_bands_x >= 1 && self.num_bands_y >= 1,
            InvalidArgument,
            "band counts must be >= 1"
        );
        for (w, n) in [(&self.band_widths_x, self.num_bands_x), (&self.band_widths_y, self.num_bands_y)] {
            if let Some(w) = w {
                ensure!(w.len() == n, InvalidArgument, "band width list has {} entries but {n} bands", w.len());
            }
        }
        if self.generator_mode == GeneratorMode::OneOne {
            ensure!(
                self.num_bands_x == self.num_bands_y,
                InvalidArgument,
                "one_one mode needs num_bands_x == num_bands_y"
            );
        }
        ensure!(self.d_steps_per_g_step >= 1, InvalidArgument, "d_steps_per_g_step must be >= 1");
        ensure!(
            finite_nonneg(self.learning_rate_g) && finite_nonneg(self.learning_rate_d),
            InvalidArgument,
            "learning rates must be finite and >= 0"
        );
        ensure!(
            (0.0..1.0).contains(&self.generator_ema),
            InvalidArgument,
            "generator_ema must lie in [0, 1)"
        );
        for b in [self.adam_beta1, self.adam_beta2] {
            ensure!(b > 0.0 && b < 1.0, InvalidArgument, "adam betas must lie in (0, 1)");
        }
        ensure!(self.batch_size >= 1, InvalidArgument, "batch_size must be >= 1");
        ensure!(
            self.crop_frames >= 4 && self.crop_frames % 4 == 0,
            InvalidArgument,
            "crop_frames must be a positive multiple of 4"
        );
        Ok(())
    }

    /// Learning-rate multiplier for the update that follows `done` steps.
    pub fn lr_factor(&self, done: u64) -> f64 {
        if self.lr_decay_steps == 0 {
            return 1.0;
        }
        (self.total_steps.saturating_sub(done) as f64 / self.lr_decay_steps as f64).min(1.0)
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            cycle_weight: self.cycle_weight,
            identity_weight: self.identity_weight,
            variant: self.loss_variant,
        }
    }

    /// Shapes of the networks this config trains on `bins`-bin inputs.
    pub fn bundle_config(&self, generator: &GeneratorConfig, discriminator: &DiscriminatorConfig, bins: usize) -> Result<BundleConfig> {
        self.validate()?;
        let config = BundleConfig {
            generator: generator.clone(),
            discriminator: discriminator.clone(),
            layout_x: layout(bins, self.num_bands_x, &self.band_widths_x)?,
            layout_y: layout(bins, self.num_bands_y, &self.band_widths_y)?,
            generator_mode: self.generator_mode,
            frames: self.crop_frames,
        };
        config.validate()?;
        Ok(config)
    }
}

fn layout(bins: usize, n: usize, widths: &Option<Vec<usize>>) -> Result<BandLayout> {
    match widths {
        None => build_band_layout(bins, n),
        Some(w) => {
            let l = BandLayout::from_widths(w.clone())?;
            ensure!(l.total_bins == bins, InvalidArgument, "band widths sum to {} but there are {bins} bins", l.total_bins);
            Ok(l)
        }
    }
}

/// First and second moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Param<T>]) -> Self {
        AdamState {
            t: 0,
            m: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> AdamState<U> {
        let c = |v: &Vec<Vec<T>>| v.iter().map(|x| x.iter().map(|&a| U::lit(a.to_f64_lossy())).collect()).collect();
        AdamState {
            t: self.t,
            m: c(&self.m),
            v: c(&self.v),
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: Vec<&mut Param<T>>, grads: &[&Vec<T>], lr: f64, beta1: f64, beta2: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        self.t += 1;
        let t = self.t as i32;
        let step = T::lit(lr / (1.0 - beta1.powi(t)));
        let vscale = T::lit(1.0 / (1.0 - beta2.powi(t)).sqrt());
        let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(ADAM_EPS));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w -= step * *m / (v.sqrt() * vscale + eps);
            }
        }
    }
}

/// Separate optimizers for the generator and discriminator parameter sets.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub g: AdamState<T>,
    pub d: AdamState<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(bundle: &ModelBundle<T>) -> Self {
        OptimizerState {
            g: AdamState::new(&bundle.generator_params()),
            d: AdamState::new(&bundle.discriminator_params()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> OptimizerState<U> {
        OptimizerState {
            g: self.g.cast(),
            d: self.d.cast(),
        }
    }
}

fn check_batch<T: Scalar>(bundle: &ModelBundle<T>, b: &Array4<T>, name: &str) -> Result<()> {
    let (n, c, f, t) = b.dim();
    ensure!(
        n >= 1 && c == 1 && f == bundle.config.bins() && t == bundle.config.frames,
        Shape,
        "{name} batch {:?} must be (n, 1, {}, {})",
        b.dim(),
        bundle.config.bins(),
        bundle.config.frames
    );
    ensure!(b.iter().all(|v| v.is_finite()), NonFinite, "{name} batch has non-finite values");
    Ok(())
}

/// `d_steps_per_g_step` discriminator updates on all bands of both domains,
/// then one generator update on the full objective. The fakes from the
/// discriminator phase are reused by the generator phase, which is exact
/// because generators do not change in between.
///
/// Discriminator entries of the report come from the last discriminator
/// evaluation (before its update); generator entries from the generator
/// evaluation against the updated discriminators.
pub fn train_step<T: Scalar>(
    bundle: &mut ModelBundle<T>,
    opt: &mut OptimizerState<T>,
    x: &Array4<T>,
    y: &Array4<T>,
    cfg: &TrainConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<LossReport> {
    cfg.validate()?;
    check_batch(bundle, x, "x")?;
    check_batch(bundle, y, "y")?;
    let objective = cfg.objective();
    let fy = gen_forward(bundle, Direction::XToY, x, rng.as_deref_mut())?;
    let fx = gen_forward(bundle, Direction::YToX, y, rng.as_deref_mut())?;
    let fake_y = fake_batch(bundle, &fy);
    let fake_x = fake_batch(bundle, &fx);

    let mut d_report = None;
    for _ in 0..cfg.d_steps_per_g_step {
        let mut grads = BundleGrads::zeros(bundle);
        let r = discriminator_side(bundle, x, y, &fake_x, &fake_y, cfg.loss_variant, Some(&mut grads))?;
        ensure!(
            r.0.is_finite() && r.2.is_finite(),
            NonFinite,
            "discriminator loss is not finite (x {:?}, y {:?})",
            r.0,
            r.2
        );
        opt.d.step(
            bundle.discriminator_params_mut(),
            &grads.discriminator_flat(),
            cfg.learning_rate_d,
            cfg.adam_beta1,
            cfg.adam_beta2,
        );
        d_report = Some(r);
    }
    let (d_x, band_x, d_y, band_y) = d_report.expect("at least one discriminator step");

    let mut grads = BundleGrads::zeros(bundle);
    let g = generator_side(bundle, x, y, &fy, &fx, &objective, Some(&mut grads), rng)?;
    opt.g.step(
        bundle.generator_params_mut(),
        &grads.generator_flat(),
        cfg.learning_rate_g,
        cfg.adam_beta1,
        cfg.adam_beta2,
    );
    let f = |v: T| v.to_f64_lossy();
    Ok(LossReport {
        d_loss_x: f(d_x),
        d_loss_y: f(d_y),
        per_band_d_x: band_x.into_iter().map(f).collect(),
        per_band_d_y: band_y.into_iter().map(f).collect(),
        g_adv_xy: f(g.g_adv_xy),
        g_adv_yx: f(g.g_adv_yx),
        cycle: f(g.cycle),
        identity: f(g.identity),
        total_g: f(g.total_g),
    })
}

/// One discriminator-only update against the current generators' fakes.
/// Returns `d_loss_x + d_loss_y` before the update.
pub fn discriminator_step<T: Scalar>(
    bundle: &mut ModelBundle<T>,
    opt: &mut OptimizerState<T>,
    x: &Array4<T>,
    y: &Array4<T>,
    cfg: &TrainConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    check_batch(bundle, x, "x")?;
    check_batch(bundle, y, "y")?;
    let fy = gen_forward(bundle, Direction::XToY, x, rng.as_deref_mut())?;
    let fx = gen_forward(bundle, Direction::YToX, y, rng)?;
    let fake_y = fake_batch(bundle, &fy);
    let fake_x = fake_batch(bundle, &fx);
    let mut grads = BundleGrads::zeros(bundle);
    let (d_x, _, d_y, _) = discriminator_side(bundle, x, y, &fake_x, &fake_y, cfg.loss_variant, Some(&mut grads))?;
    let total = (d_x + d_y).to_f64_lossy();
    ensure!(total.is_finite(), NonFinite, "discriminator loss is not finite");
    opt.d.step(
        bundle.discriminator_params_mut(),
        &grads.discriminator_flat(),
        cfg.learning_rate_d,
        cfg.adam_beta1,
        cfg.adam_beta2,
    );
    Ok(total)
}

/// `cfg.pretrain_d_steps` discriminator-only updates on freshly sampled
/// batches. Generator parameters are left untouched.
pub fn pretrain_discriminators(
    bundle: &mut ModelBundle<f32>,
    opt: &mut OptimizerState<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    (0..cfg.pretrain_d_steps)
        .map(|_| {
            let x = data.sample_batch(Domain::X, cfg.batch_size, cfg.crop_frames, rng)?;
            let y = data.sample_batch(Domain::Y, cfg.batch_size, cfg.crop_frames, rng)?;
            discriminator_step(bundle, opt, &x, &y, cfg, Some(rng))
        })
        .collect()
}

/// Everything a training run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub stft: StftParams,
}

/// One log line.
#[derive(Serialize)]
struct LogLine<'a> {
    step: u64,
    #[serde(flatten)]
    report: &'a LossReport,
    wallclock_s: f64,
}

/// In-memory training run over a normalized dataset.
pub struct Trainer {
    pub settings: RunSettings,
    pub bundle: ModelBundle<f32>,
    pub opt: OptimizerState<f32>,
    pub norm_x: NormStats,
    pub norm_y: NormStats,
    pub step: u64,
    pub pretrained: bool,
    /// Averaged generator weights, in `generator_params` order.
    pub generator_average: Option<Vec<Vec<f32>>>,
    rng: ChaCha8Rng,
    data: Dataset,
}

fn generator_snapshot(bundle: &ModelBundle<f32>) -> Vec<Vec<f32>> {
    bundle.generator_params().iter().map(|p| p.data.clone()).collect()
}

/// `bundle` with its generator weights replaced by `average`, when given.
pub fn with_generator_average(bundle: &ModelBundle<f32>, average: Option<&Vec<Vec<f32>>>) -> ModelBundle<f32> {
    let mut out = bundle.clone();
    if let Some(avg) = average {
        for (p, a) in out.generator_params_mut().into_iter().zip(avg) {
            p.data.clone_from(a);
        }
    }
    out
}

impl Trainer {
    /// Fresh run: shared normalization statistics are fitted on the corpus
    /// and parameters initialized from the run seed.
    pub fn new(settings: RunSettings, corpus: &Corpus) -> Result<Self> {
        let stats = corpus.fit_shared_stats()?;
        let config = settings.train.bundle_config(&settings.generator, &settings.discriminator, stats.bins())?;
        let bundle = init_parameters::<f32>(config, settings.train.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.train.seed);
        rng.set_stream(DATA_STREAM);
        Ok(Trainer {
            generator_average: (settings.train.generator_ema > 0.0).then(|| generator_snapshot(&bundle)),
            opt: OptimizerState::new(&bundle),
            data: corpus.normalize(&stats)?,
            norm_x: stats.clone(),
            norm_y: stats,
            bundle,
            step: 0,
            pretrained: false,
            rng,
            settings,
        })
    }

    /// Continues from a checkpoint using its stored statistics and seed
    /// stream position.
    pub fn resume(ckpt: Checkpoint, corpus: &Corpus) -> Result<Self> {
        ensure!(
            ckpt.norm_x == ckpt.norm_y,
            InvalidArgument,
            "checkpoint has per-domain statistics; training expects shared ones"
        );
        let data = corpus.normalize(&ckpt.norm_x)?;
        let generator_average = match ckpt.generator_average {
            None if ckpt.settings.train.generator_ema > 0.0 => Some(generator_snapshot(&ckpt.bundle)),
            avg => avg,
        };
        Ok(Trainer {
            generator_average,
            settings: ckpt.settings,
            bundle: ckpt.bundle,
            opt: ckpt.optimizer,
            norm_x: ckpt.norm_x,
            norm_y: ckpt.norm_y,
            step: ckpt.step,
            pretrained: ckpt.pretrained,
            rng: ckpt.rng.restore(),
            data,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            pretrained: self.pretrained,
            settings: self.settings.clone(),
            bundle: self.bundle.clone(),
            optimizer: self.opt.clone(),
            norm_x: self.norm_x.clone(),
            norm_y: self.norm_y.clone(),
            rng: RngSnapshot::capture(&self.rng),
            generator_average: self.generator_average.clone(),
        }
    }

    /// The networks used for adaptation: averaged generators when enabled.
    pub fn inference_bundle(&self) -> ModelBundle<f32> {
        with_generator_average(&self.bundle, self.generator_average.as_ref())
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    /// Runs discriminator pretraining once per run.
    pub fn pretrain(&mut self) -> Result<Vec<f64>> {
        if self.pretrained {
            return Ok(Vec::new());
        }
        let losses = pretrain_discriminators(&mut self.bundle, &mut self.opt, &self.data, &self.settings.train, &mut self.rng)
            .map_err(|e| Error::Diverged {
                step: 0,
                message: format!("during discriminator pretraining: {e}"),
            })?;
        self.pretrained = true;
        Ok(losses)
    }

    /// Samples a batch pair and takes one training step.
    pub fn step(&mut self) -> Result<LossReport> {
        let mut cfg = self.settings.train.clone();
        let factor = cfg.lr_factor(self.step);
        cfg.learning_rate_g *= factor;
        cfg.learning_rate_d *= factor;
        let x = self.data.sample_batch(Domain::X, cfg.batch_size, cfg.crop_frames, &mut self.rng)?;
        let y = self.data.sample_batch(Domain::Y, cfg.batch_size, cfg.crop_frames, &mut self.rng)?;
        let report = train_step(&mut self.bundle, &mut self.opt, &x, &y, &cfg, Some(&mut self.rng)).map_err(|e| {
            Error::Diverged {
                step: self.step + 1,
                message: e.to_string(),
            }
        })?;
        if let Some(avg) = self.generator_average.as_mut() {
            let d = cfg.generator_ema as f32;
            for (a, p) in avg.iter_mut().zip(self.bundle.generator_params()) {
                for (a, &w) in a.iter_mut().zip(&p.data) {
                    *a = d * *a + (1.0 - d) * w;
                }
            }
        }
        self.step += 1;
        Ok(report)
    }

    /// Pretrains if needed, then steps until `total_steps`. Appends one JSON
    /// line per step to `log` and atomically rewrites `checkpoint` every
    /// `checkpoint_every` steps and at the end. On divergence the last
    /// written checkpoint is left in place.
    pub fn run(&mut self, checkpoint: Option<&Path>, log: Option<&Path>) -> Result<()> {
        let mut log_file = match log {
            Some(p) => Some(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?,
            ),
            None => None,
        };
        self.pretrain()?;
        let started = Instant::now();
        let every = self.settings.train.checkpoint_every;
        while self.step < self.settings.train.total_steps {
            let report = self.step()?;
            if let (Some(f), Some(p)) = (log_file.as_mut(), log) {
                let line = LogLine {
                    step: self.step,
                    report: &report,
                    wallclock_s: started.elapsed().as_secs_f64(),
                };
                let mut text = serde_json::to_string(&line).expect("log lines serialize");
                text.push('\n');
                f.write_all(text.as_bytes()).map_err(|e| Error::io(p, e))?;
            }
            if let Some(p) = checkpoint {
                if every > 0 && self.step % every == 0 {
                    save_checkpoint(&self.checkpoint(), p)?;
                }
            }
            log::debug!("step {} total_g {:.4}", self.step, report.total_g);
        }
        if let Some(p) = checkpoint {
            save_checkpoint(&self.checkpoint(), p)?;
        }
        Ok(())
    }
}

/// Default locations inside a run directory.
pub fn run_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("checkpoint.mdck"), dir.join("train_log.jsonl"))
}
