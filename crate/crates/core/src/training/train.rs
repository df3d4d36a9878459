use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::loss::{weighted_loss_grad, DEFAULT_VARIANCE_FLOOR};
use super::network::{Activation, Architecture, BuiltinDenoiser, OutputSkip};
use super::Trainable;
use crate::diffusion::{ddpm_forward_closed, forward_closed};
use crate::error::{Error, Result};
use crate::field::{PixelField, SpectralField};
use crate::rng::{self, StreamRng};
use crate::schedule::NoiseSchedule;
use crate::spectral::{to_pixel, to_spectral, to_spectral_adjoint};
use crate::stats::{fit_class_stats, ClassStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsScope {
    Global,
    PerClass,
}

/// Which diffusion process the denoiser is trained for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Spectral forward process toward `N(mu, Sigma)`, variance-weighted
    /// spectral loss.
    #[default]
    Inspect,
    /// Pixel-space white-noise forward process, plain pixel MSE on the
    /// clean-image prediction.
    Ddpm,
}

/// Parameter update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent with a fixed step.
    #[default]
    Sgd,
    /// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Update rule together with its running state.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Adam first and second moment estimates (empty for SGD).
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n_params: usize) -> Self {
        let n = if kind == OptimizerKind::Adam { n_params } else { 0 };
        Optimizer {
            kind,
            learning_rate,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, 0)
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powf(self.step as f64);
                let c2 = 1.0 - ADAM_BETA2.powf(self.step as f64);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

fn default_floor() -> f64 {
    DEFAULT_VARIANCE_FLOOR
}
fn default_hidden() -> usize {
    8
}
fn default_blocks() -> usize {
    2
}
fn default_activation() -> Activation {
    Activation::Silu
}
fn default_scope() -> StatsScope {
    StatsScope::Global
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_floor")]
    pub variance_floor: f64,
    pub seed: u64,
    #[serde(default = "default_scope")]
    pub stats_scope: StatsScope,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub skip: OutputSkip,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(iterations: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            iterations,
            batch_size,
            learning_rate,
            optimizer: OptimizerKind::Sgd,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            seed,
            stats_scope: StatsScope::Global,
            objective: Objective::Inspect,
            hidden: default_hidden(),
            blocks: default_blocks(),
            activation: Activation::Silu,
            skip: OutputSkip::None,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::InvalidParameter("variance_floor must be positive".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::InvalidParameter("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

/// Clean training images with their spectra and the statistics each one is
/// noised toward.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub pixels: Vec<PixelField>,
    pub spectra: Vec<SpectralField>,
    pub stats: Vec<ClassStats>,
    /// Index into `stats` for every image.
    pub stats_index: Vec<usize>,
}

impl TrainingSet {
    /// Transforms `images` and fits either one global stats object or one
    /// per distinct label (labels required for per-class scope).
    pub fn new(images: Vec<PixelField>, labels: Option<&[u32]>, scope: StatsScope) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Empty { what: "dataset" });
        }
        let spectra = crate::spectral::to_spectral_batch(&images)?;
        let (stats, stats_index) = match scope {
            StatsScope::Global => (vec![fit_class_stats(&spectra, None)?], vec![0; images.len()]),
            StatsScope::PerClass => {
                let labels = labels.ok_or_else(|| Error::InvalidParameter("per-class stats need labels".into()))?;
                if labels.len() != images.len() {
                    return Err(Error::CountMismatch {
                        images: images.len(),
                        labels: labels.len(),
                    });
                }
                let mut classes: Vec<u32> = labels.to_vec();
                classes.sort_unstable();
                classes.dedup();
                let stats = classes
                    .iter()
                    .map(|&c| {
                        fit_class_stats(
                            spectra.iter().zip(labels).filter(|(_, l)| **l == c).map(|(s, _)| s),
                            Some(c.to_string()),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                let index = labels
                    .iter()
                    .map(|l| classes.binary_search(l).expect("label was collected"))
                    .collect();
                (stats, index)
            }
        };
        Ok(TrainingSet {
            pixels: images,
            spectra,
            stats,
            stats_index,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

fn mean_grads(parts: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    let n = parts.len() as f64;
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().expect("non-empty batch");
    // fixed reduction order keeps runs bitwise reproducible
    for (l, g) in iter {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    for g in &mut grad {
        *g /= n;
    }
    (loss / n, grad)
}

/// One gradient-descent step on the spectral objective. For each batch
/// element, in order: draw `t ~ U{1..T}`, noise `x_0` with the closed-form
/// forward law, predict in pixel space, and score with the variance-weighted
/// spectral loss. Returns the batch-mean loss before the update.
pub fn train_step<M: Trainable>(
    model: &mut M,
    batch: &[(&SpectralField, &ClassStats)],
    sched: &NoiseSchedule,
    rng: &mut StreamRng,
    opt: &mut Optimizer,
    floor: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty { what: "batch" });
    }
    let steps = sched.steps();
    let noised = batch
        .iter()
        .map(|(x0, stats)| {
            let t = rng.random_range(1..=steps);
            forward_closed(x0, t, stats, sched, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let model_ref = &*model;
    let parts = batch
        .par_iter()
        .zip(&noised)
        .map(|((x0, stats), state)| {
            let input = to_pixel(&state.x)?;
            model_ref.loss_and_grad(&input, state.t, steps, &mut |pred| {
                let (loss, g) = weighted_loss_grad(&to_spectral(pred)?, x0, stats, floor)?;
                Ok((loss, to_spectral_adjoint(&g)?))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, grad) = mean_grads(parts);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0, loss });
    }
    opt.apply(model.params_mut(), &grad);
    Ok(loss)
}

/// Baseline counterpart of [`train_step`]: white-noise pixel forward process
/// and pixel MSE.
pub fn train_step_ddpm<M: Trainable>(
    model: &mut M,
    batch: &[&PixelField],
    sched: &NoiseSchedule,
    rng: &mut StreamRng,
    opt: &mut Optimizer,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty { what: "batch" });
    }
    let steps = sched.steps();
    let noised = batch
        .iter()
        .map(|x0| {
            let t = rng.random_range(1..=steps);
            ddpm_forward_closed(x0, t, sched, rng).map(|x| (t, x))
        })
        .collect::<Result<Vec<_>>>()?;
    let model_ref = &*model;
    let parts = batch
        .par_iter()
        .zip(&noised)
        .map(|(x0, (t, xt))| {
            model_ref.loss_and_grad(xt, *t, steps, &mut |pred| {
                let n = pred.values().len() as f64;
                let mut loss = 0.0;
                let g = pred
                    .values()
                    .iter()
                    .zip(x0.values())
                    .map(|(p, x)| {
                        loss += (p - x) * (p - x);
                        2.0 * (p - x) / n
                    })
                    .collect();
                Ok((loss / n, PixelField::from_raw(pred.shape(), g)))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, grad) = mean_grads(parts);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0, loss });
    }
    opt.apply(model.params_mut(), &grad);
    Ok(loss)
}

pub struct TrainOutcome {
    pub model: BuiltinDenoiser,
    pub optimizer: Optimizer,
    /// `(iteration, pre-update loss)` for every iteration run.
    pub history: Vec<(usize, f64)>,
    pub iteration: usize,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint::new(&self.model, &self.optimizer, config.clone(), self.iteration)
    }
}

/// Runs `config.iterations` steps, starting fresh or from `resume`.
/// Iteration `i` draws its batch and noise from stream `(seed, "train", i)`,
/// so a resumed run continues bit-for-bit where the original left off.
/// `on_checkpoint` is called every `checkpoint_every` iterations.
pub fn train_loop(
    config: &TrainConfig,
    set: &TrainingSet,
    sched: &NoiseSchedule,
    resume: Option<&Checkpoint>,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::Empty { what: "dataset" });
    }
    let shape = set.pixels[0].shape();
    let (mut model, mut opt, start) = match resume {
        Some(ckpt) => (
            ckpt.model()?,
            ckpt.optimizer(config.learning_rate)?,
            ckpt.header.iteration,
        ),
        None => {
            let arch =
                Architecture::new(shape, config.hidden, config.blocks, config.activation)?.with_skip(config.skip);
            let model = BuiltinDenoiser::new(arch, config.seed)?;
            let opt = Optimizer::new(config.optimizer, config.learning_rate, model.params().len());
            (model, opt, 0)
        }
    };
    if opt.kind != config.optimizer {
        return Err(Error::InvalidParameter(format!(
            "checkpoint was written with {:?}, config asks for {:?}",
            opt.kind, config.optimizer
        )));
    }
    model.architecture().shape.expect(shape)?;
    let mut history = Vec::with_capacity(config.iterations.saturating_sub(start));
    for it in start..config.iterations {
        let mut rng = rng::stream(config.seed, "train", it as u64);
        let picks: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..set.len())).collect();
        let result = match config.objective {
            Objective::Inspect => {
                let batch: Vec<(&SpectralField, &ClassStats)> = picks
                    .iter()
                    .map(|&i| (&set.spectra[i], &set.stats[set.stats_index[i]]))
                    .collect();
                train_step(&mut model, &batch, sched, &mut rng, &mut opt, config.variance_floor)
            }
            Objective::Ddpm => {
                let batch: Vec<&PixelField> = picks.iter().map(|&i| &set.pixels[i]).collect();
                train_step_ddpm(&mut model, &batch, sched, &mut rng, &mut opt)
            }
        };
        let loss = match result {
            Ok(loss) => loss,
            Err(Error::NonFiniteLoss { loss, .. }) => return Err(Error::NonFiniteLoss { iteration: it, loss }),
            Err(e) => return Err(e),
        };
        history.push((it, loss));
        if let Some(every) = config.checkpoint_every {
            if (it + 1) % every == 0 {
                on_checkpoint(&Checkpoint::new(&model, &opt, config.clone(), it + 1))?;
            }
        }
    }
    let iteration = config.iterations.max(start);
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        history,
        iteration,
    })
}

/// Worst relative error between analytic parameter gradients of the
/// weighted spectral loss and central finite differences (step `1e-5`) over
/// `n_params` randomly chosen parameters (all of them if fewer).
///
/// Relative error is `|a - f| / max(|a|, |f|, 1e-6 * max|a|)`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check<M: Trainable + Clone>(
    model: &M,
    input: &PixelField,
    target: &SpectralField,
    stats: &ClassStats,
    t: usize,
    steps: usize,
    floor: f64,
    n_params: usize,
    seed: u64,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let (_, grad) = model.loss_and_grad(input, t, steps, &mut |pred| {
        let (l, g) = weighted_loss_grad(&to_spectral(pred)?, target, stats, floor)?;
        Ok((l, to_spectral_adjoint(&g)?))
    })?;
    // difference of losses formed as sum of w (e+ - e-)(e+ + e-), which
    // avoids cancelling two nearly equal totals
    let weights: Vec<f64> = stats.var.iter().map(|v| 1.0 / v.max(floor)).collect();
    let n = weights.len() as f64;
    let loss_delta = |hi: &M, lo: &M| -> Result<f64> {
        let sh = to_spectral(&hi.predict(input, t, steps))?;
        let sl = to_spectral(&lo.predict(input, t, steps))?;
        Ok(sh
            .values()
            .iter()
            .zip(sl.values())
            .zip(target.values())
            .zip(&weights)
            .map(|(((a, b), x), w)| w * (a - b) * (a + b - 2.0 * x))
            .sum::<f64>()
            / n)
    };
    let total = grad.len();
    let chosen: Vec<usize> = if n_params >= total {
        (0..total).collect()
    } else {
        let mut r = rng::stream(seed, "gradcheck", 0);
        let mut all: Vec<usize> = (0..total).collect();
        for i in 0..n_params {
            let j = r.random_range(i..total);
            all.swap(i, j);
        }
        all.truncate(n_params);
        all
    };
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) * 1e-6;
    let mut worst = 0.0f64;
    let mut hi = model.clone();
    let mut lo = model.clone();
    for i in chosen {
        let orig = model.params()[i];
        hi.params_mut()[i] = orig + STEP;
        lo.params_mut()[i] = orig - STEP;
        let fd = loss_delta(&hi, &lo)? / (2.0 * STEP);
        hi.params_mut()[i] = orig;
        lo.params_mut()[i] = orig;
        let denom = grad[i].abs().max(fd.abs()).max(scale).max(f64::MIN_POSITIVE);
        worst = worst.max((grad[i] - fd).abs() / denom);
    }
    Ok(worst)
}
