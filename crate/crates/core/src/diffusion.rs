//! Feature-preserving forward/backward processes in spectral space and the
//! pixel-space DDPM baseline.
//!
//! Forward step (the covariance composes to the closed form):
//!
//! ```text
//! x_t = sqrt(alpha_t) x_{t-1} + N((1 - sqrt(alpha_t)) mu, (1 - alpha_t) Sigma)
//! q(x_t | x_0) = N(sqrt(abar_t) x_0 + (1 - sqrt(abar_t)) mu, (1 - abar_t) Sigma)
//! ```
//!
//! Backward step: `x_{t-1} = a_t x_t + b_t x0_pred + gamma_t mu + z`,
//! `z ~ N(0, beta_hat_t Sigma)`.
//!
//! All updates are written relative to `mu` (`mu + sqrt(alpha) (x - mu)`
//! and so on), which is algebraically the same law but leaves a component
//! that sits at its mean with zero variance bitwise unchanged.
//!
//! Every kernel draws exactly one standard normal per component, in index
//! order, even where the variance is zero. Two processes fed the same stream
//! therefore consume it identically, which is what makes the DDPM reduction
//! path-comparable.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{PixelField, Shape, SpectralField};
use crate::rng::{self, StreamRng};
use crate::schedule::{NoiseSchedule, PosteriorCoeffs};
use crate::spectral::{to_pixel, to_spectral};
use crate::stats::ClassStats;
use crate::training::Denoiser;

/// Cap on recorded trajectory frames.
pub const MAX_SNAPSHOTS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionState {
    pub x: SpectralField,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorParams {
    pub mean: SpectralField,
    pub beta_hat: f64,
    /// `beta_hat * sigma^2` per component.
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub x: SpectralField,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub image: PixelField,
    pub trajectory: Vec<Snapshot>,
}

/// One forward step on raw component slices.
pub fn forward_step_in_place<R: Rng + ?Sized>(x: &mut [f64], mu: &[f64], var: &[f64], alpha: f64, rng: &mut R) {
    let sa = alpha.sqrt();
    let noise_scale = (1.0 - alpha).sqrt();
    for ((x, &m), &v) in x.iter_mut().zip(mu).zip(var) {
        let z = rng::normal(rng);
        *x += (sa - 1.0) * (*x - m) + noise_scale * v.sqrt() * z;
    }
}

/// Draw from the closed-form forward law at a given `alpha_bar`.
pub fn forward_closed_into<R: Rng + ?Sized>(
    x0: &[f64],
    mu: &[f64],
    var: &[f64],
    alpha_bar: f64,
    rng: &mut R,
    out: &mut [f64],
) {
    let sab = alpha_bar.sqrt();
    let noise_scale = (1.0 - alpha_bar).sqrt();
    for (i, o) in out.iter_mut().enumerate() {
        let z = rng::normal(rng);
        *o = mu[i] + sab * (x0[i] - mu[i]) + noise_scale * var[i].sqrt() * z;
    }
}

/// `a x_t + b x_0 + gamma mu`, evaluated as `mu + a (x_t - mu) + b (x_0 - mu)`
/// using `a + b + gamma = 1`. Centering keeps a component sitting exactly at
/// its mean bitwise fixed.
#[inline]
pub fn posterior_mean(c: PosteriorCoeffs, xt: f64, x0: f64, mu: f64) -> f64 {
    mu + c.a * (xt - mu) + c.b * (x0 - mu)
}

/// Posterior sample on raw slices.
pub fn backward_into<R: Rng + ?Sized>(
    xt: &[f64],
    x0: &[f64],
    mu: &[f64],
    var: &[f64],
    c: PosteriorCoeffs,
    rng: &mut R,
    out: &mut [f64],
) {
    let noise_scale = c.beta_hat.sqrt();
    for (i, o) in out.iter_mut().enumerate() {
        let z = rng::normal(rng);
        *o = posterior_mean(c, xt[i], x0[i], mu[i]) + noise_scale * var[i].sqrt() * z;
    }
}

fn check_stats(stats: &ClassStats, shape: Shape) -> Result<()> {
    stats.shape.expect(shape)
}

pub fn forward_step(
    state: &DiffusionState,
    stats: &ClassStats,
    sched: &NoiseSchedule,
    rng: &mut StreamRng,
) -> Result<DiffusionState> {
    check_stats(stats, state.x.shape())?;
    if state.t >= sched.steps() {
        return Err(Error::TimestepOutOfRange {
            t: state.t + 1,
            max: sched.steps(),
        });
    }
    let t = state.t + 1;
    let mut x = state.x.clone();
    forward_step_in_place(x.values_mut(), &stats.mu, &stats.var, sched.alpha(t), rng);
    Ok(DiffusionState { x, t })
}

pub fn forward_closed(
    x0: &SpectralField,
    t: usize,
    stats: &ClassStats,
    sched: &NoiseSchedule,
    rng: &mut StreamRng,
) -> Result<DiffusionState> {
    check_stats(stats, x0.shape())?;
    if t > sched.steps() {
        return Err(Error::TimestepOutOfRange { t, max: sched.steps() });
    }
    if t == 0 {
        return Ok(DiffusionState { x: x0.clone(), t });
    }
    let mut out = vec![0.0; x0.values().len()];
    forward_closed_into(x0.values(), &stats.mu, &stats.var, sched.alpha_bar(t), rng, &mut out);
    Ok(DiffusionState {
        x: SpectralField::from_raw(x0.shape(), out),
        t,
    })
}

/// `x_T ~ N(mu, Sigma)`, the start of sampling.
pub fn terminal_sample(stats: &ClassStats, steps: usize, rng: &mut StreamRng) -> DiffusionState {
    let x = stats
        .mu
        .iter()
        .zip(&stats.var)
        .map(|(m, v)| m + v.sqrt() * rng::normal(rng))
        .collect();
    DiffusionState {
        x: SpectralField::from_raw(stats.shape, x),
        t: steps,
    }
}

pub fn posterior_params(
    xt: &SpectralField,
    x0: &SpectralField,
    t: usize,
    stats: &ClassStats,
    sched: &NoiseSchedule,
) -> Result<PosteriorParams> {
    check_stats(stats, xt.shape())?;
    xt.shape().expect(x0.shape())?;
    let c = sched.posterior_coeffs(t)?;
    let mean = xt
        .values()
        .iter()
        .zip(x0.values())
        .zip(&stats.mu)
        .map(|((a, b), m)| posterior_mean(c, *a, *b, *m))
        .collect();
    Ok(PosteriorParams {
        mean: SpectralField::from_raw(xt.shape(), mean),
        beta_hat: c.beta_hat,
        variance: stats.var.iter().map(|v| c.beta_hat * v).collect(),
    })
}

pub fn backward_step(
    xt: &SpectralField,
    x0_pred: &SpectralField,
    t: usize,
    stats: &ClassStats,
    sched: &NoiseSchedule,
    rng: &mut StreamRng,
) -> Result<SpectralField> {
    check_stats(stats, xt.shape())?;
    xt.shape().expect(x0_pred.shape())?;
    let c = sched.posterior_coeffs(t)?;
    let mut out = vec![0.0; xt.values().len()];
    backward_into(xt.values(), x0_pred.values(), &stats.mu, &stats.var, c, rng, &mut out);
    Ok(SpectralField::from_raw(xt.shape(), out))
}

fn snapshot_stride(steps: usize) -> usize {
    // frames at t = T, T - stride, ... plus the final state
    steps.div_ceil(MAX_SNAPSHOTS - 1).max(1)
}

fn predict_checked<D: Denoiser + ?Sized>(denoiser: &D, x: &PixelField, t: usize, steps: usize) -> Result<PixelField> {
    let pred = denoiser.predict(x, t, steps);
    if pred.shape() != x.shape() {
        return Err(Error::InvalidParameter(format!(
            "denoiser returned shape {} for input {} at t={t}",
            pred.shape(),
            x.shape()
        )));
    }
    if !pred.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "denoiser returned non-finite values at t={t}"
        )));
    }
    Ok(pred)
}

/// Full backward chain: start at `N(mu, Sigma)`, and for `t = T..1` predict
/// the clean image in pixel space, map it to spectral space and take a
/// posterior step. Returns the last clean-image prediction.
pub fn sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    stats: &ClassStats,
    sched: &NoiseSchedule,
    rng: &mut StreamRng,
    record_trajectory: bool,
) -> Result<SampleOutput> {
    let steps = sched.steps();
    let stride = snapshot_stride(steps);
    let mut state = terminal_sample(stats, steps, rng);
    let mut trajectory = Vec::new();
    let mut x0_pred = None;
    for t in (1..=steps).rev() {
        if record_trajectory && (steps - t).is_multiple_of(stride) {
            trajectory.push(Snapshot {
                step: t,
                x: state.x.clone(),
            });
        }
        let pred_px = predict_checked(denoiser, &to_pixel(&state.x)?, t, steps)?;
        let pred = to_spectral(&pred_px)?;
        state = DiffusionState {
            x: backward_step(&state.x, &pred, t, stats, sched, rng)?,
            t: t - 1,
        };
        x0_pred = Some(pred_px);
    }
    if record_trajectory {
        trajectory.push(Snapshot {
            step: 0,
            x: state.x.clone(),
        });
    }
    Ok(SampleOutput {
        image: x0_pred.expect("schedule has at least one step"),
        trajectory,
    })
}

/// Trajectory `i` of a batch uses stream `(seed, "sample", i)`, so results
/// do not depend on how the batch is scheduled across threads.
pub fn sample_batch<D: Denoiser + ?Sized>(
    denoiser: &D,
    stats: &ClassStats,
    sched: &NoiseSchedule,
    seed: u64,
    count: usize,
    record_trajectory: bool,
) -> Result<Vec<SampleOutput>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, "sample", i as u64);
            sample(denoiser, stats, sched, &mut rng, record_trajectory)
        })
        .collect()
}

/// `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps` in pixel space.
pub fn ddpm_forward_closed(
    x0: &PixelField,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut StreamRng,
) -> Result<PixelField> {
    if t > sched.steps() {
        return Err(Error::TimestepOutOfRange { t, max: sched.steps() });
    }
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = sched.alpha_bar(t);
    let (sab, noise_scale) = (ab.sqrt(), (1.0 - ab).sqrt());
    let out = x0
        .values()
        .iter()
        .map(|x| sab * x + noise_scale * rng::normal(rng))
        .collect();
    Ok(PixelField::from_raw(x0.shape(), out))
}

/// What a baseline denoiser produced.
#[derive(Clone, Debug)]
pub enum Prediction {
    CleanImage(PixelField),
    Noise(PixelField),
}

/// Inverts the closed-form forward law for `x_0` given a noise estimate.
pub fn x0_from_noise(xt: &PixelField, eps: &PixelField, t: usize, sched: &NoiseSchedule) -> Result<PixelField> {
    sched.check_step(t)?;
    xt.shape().expect(eps.shape())?;
    let ab = sched.alpha_bar(t);
    let (sab, noise_scale) = (ab.sqrt(), (1.0 - ab).sqrt());
    let out = xt
        .values()
        .iter()
        .zip(eps.values())
        .map(|(x, e)| (x - noise_scale * e) / sab)
        .collect();
    Ok(PixelField::from_raw(xt.shape(), out))
}

pub fn ddpm_backward_step(
    xt: &PixelField,
    prediction: &Prediction,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut StreamRng,
) -> Result<PixelField> {
    let c = sched.ddpm_posterior_coeffs(t)?;
    let x0 = match prediction {
        Prediction::CleanImage(x0) => {
            xt.shape().expect(x0.shape())?;
            x0.clone()
        }
        Prediction::Noise(eps) => x0_from_noise(xt, eps, t, sched)?,
    };
    let noise_scale = c.beta_hat.sqrt();
    let out = xt
        .values()
        .iter()
        .zip(x0.values())
        .map(|(x, p)| c.a * x + c.b * p + noise_scale * rng::normal(rng))
        .collect();
    Ok(PixelField::from_raw(xt.shape(), out))
}

/// Baseline sampler: white-noise start, x0-parameterized posterior steps,
/// same return convention as [`sample`].
pub fn ddpm_sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    shape: Shape,
    sched: &NoiseSchedule,
    rng: &mut StreamRng,
) -> Result<PixelField> {
    let steps = sched.steps();
    let mut x = PixelField::from_raw(shape, (0..shape.len()).map(|_| rng::normal(rng)).collect());
    let mut last = None;
    for t in (1..=steps).rev() {
        let pred = predict_checked(denoiser, &x, t, steps)?;
        x = ddpm_backward_step(&x, &Prediction::CleanImage(pred.clone()), t, sched, rng)?;
        last = Some(pred);
    }
    Ok(last.expect("schedule has at least one step"))
}

pub fn ddpm_sample_batch<D: Denoiser + ?Sized>(
    denoiser: &D,
    shape: Shape,
    sched: &NoiseSchedule,
    seed: u64,
    count: usize,
) -> Result<Vec<PixelField>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, "sample-ddpm", i as u64);
            ddpm_sample(denoiser, shape, sched, &mut rng)
        })
        .collect()
}
