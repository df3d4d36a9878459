//! Numerical oracles for the distributional identities of the spectral
//! diffusion process.
//!
//! Each check recomputes its reference independently of the code it
//! certifies: scalar Monte Carlo against hand-written moment formulas,
//! trapezoidal Bayes integration against the closed-form posterior, and a
//! direct recursion against the log-space drift sum. Components are
//! independent under a diagonal covariance, so scalar checks determine the
//! joint law.

use serde::Serialize;
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diffusion::{forward_closed_into, forward_step_in_place, posterior_mean};
use crate::error::{Error, Result};
use crate::field::{PixelField, SpectralField};
use crate::rng;
use crate::schedule::{DriftSequence, NoiseSchedule};
use crate::spectral::to_spectral_batch;
use crate::stats::{fit_class_stats, ClassStats};

/// Outcome of one oracle; `pass` is `discrepancy <= tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub check: String,
    pub params: Value,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Monte-Carlo sample count or quadrature grid size.
    pub samples: u64,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl OracleReport {
    pub fn new(check: &str, params: Value, discrepancy: f64, tolerance: f64, samples: u64) -> Self {
        OracleReport {
            check: check.to_string(),
            params,
            discrepancy,
            tolerance,
            pass: discrepancy <= tolerance,
            samples,
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Two-sided normal critical value giving family-wise level `alpha` over
/// `tests` independent comparisons (Sidak correction).
pub fn sidak_z(alpha: f64, tests: usize) -> f64 {
    let per_test = 1.0 - (1.0 - alpha).powf(1.0 / tests.max(1) as f64);
    Normal::standard().inverse_cdf(1.0 - per_test / 2.0)
}

/// Family-wise level of a single two-sided 3-sigma test.
pub fn three_sigma_level() -> f64 {
    2.0 * (1.0 - Normal::standard().cdf(3.0))
}

/// Running products `alpha_bar_0 = 1, alpha_bar_t = prod_{s<=t} alpha_s`.
fn running_products(alpha: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(alpha.len() + 1);
    let mut acc = 1.0;
    out.push(acc);
    for a in alpha {
        acc *= a;
        out.push(acc);
    }
    out
}

/// Simulates `n_paths` scalar chains through `T` single forward steps and
/// compares the empirical mean and variance at every `t` with
/// `sqrt(abar) x0 + (1 - sqrt(abar)) mu` and `(1 - abar) var`.
///
/// The discrepancy is the worst relative error over both moments and all
/// `t`. When `var = 0` the variance must be exactly zero and the mean is
/// compared absolutely (tolerance `1e-12`).
pub fn mc_forward_consistency(
    sched: &NoiseSchedule,
    mu: f64,
    var: f64,
    x0: f64,
    n_paths: usize,
    seed: u64,
) -> Result<OracleReport> {
    if n_paths < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: n_paths,
        });
    }
    let abar = running_products(sched.alphas());
    let mut x = vec![x0; n_paths];
    let mus = vec![mu; n_paths];
    let vars = vec![var; n_paths];
    let mut rng = rng::stream(seed, "verify-forward", 0);
    let n = n_paths as f64;
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    let mut worst_t = 0;
    for (t, &a) in sched.alphas().iter().enumerate() {
        forward_step_in_place(&mut x, &mus, &vars, a, &mut rng);
        let sab = abar[t + 1].sqrt();
        let mean = sab * x0 + (1.0 - sab) * mu;
        let want_var = (1.0 - abar[t + 1]) * var;
        // shifted two-pass moments
        let (s1, s2) = x.iter().fold((0.0, 0.0), |(s1, s2), &v| {
            let d = v - mean;
            (s1 + d, s2 + d * d)
        });
        let emp_mean = mean + s1 / n;
        let emp_var = (s2 - s1 * s1 / n) / (n - 1.0);
        let (em, ev) = if var == 0.0 {
            (
                (emp_mean - mean).abs(),
                if x.iter().all(|&v| v == x[0]) {
                    0.0
                } else {
                    f64::INFINITY
                },
            )
        } else {
            (
                (emp_mean - mean).abs() / mean.abs().max(f64::MIN_POSITIVE),
                (emp_var - want_var).abs() / want_var.max(f64::MIN_POSITIVE),
            )
        };
        if em.max(ev) > worst_mean.max(worst_var) {
            worst_t = t + 1;
        }
        worst_mean = worst_mean.max(em);
        worst_var = worst_var.max(ev);
    }
    let tolerance = if var == 0.0 { 1e-12 } else { 0.01 };
    Ok(OracleReport::new(
        "forward_consistency",
        json!({"T": sched.steps(), "mu": mu, "var": var, "x0": x0, "seed": seed}),
        worst_mean.max(worst_var),
        tolerance,
        n_paths as u64,
    )
    .with_details(json!({
        "worst_mean_rel_err": worst_mean,
        "worst_var_rel_err": worst_var,
        "worst_t": worst_t,
    })))
}

/// Posterior moments from trapezoidal integration of
/// `q(x_t | x_{t-1}) q(x_{t-1} | x_0)` on a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureMoments {
    pub mean: f64,
    pub variance: f64,
    /// Final grid half-width in posterior standard deviations.
    pub span_sd: f64,
}

/// Integrates the unnormalized posterior of `x_{t-1}` numerically. The grid
/// starts over the union of both factors' +-8 sd ranges, then is recentred
/// on the quadrature mean and resized to +-8 quadrature sd until stable.
/// Degenerate factors (zero variance) collapse the posterior to a point.
pub fn posterior_by_quadrature(
    alpha_t: f64,
    alpha_bar_prev: f64,
    mu: f64,
    var: f64,
    x0: f64,
    xt: f64,
    grid_n: usize,
) -> Result<QuadratureMoments> {
    if grid_n < 3 {
        return Err(Error::InvalidParameter("grid needs at least 3 points".into()));
    }
    // prior factor q(x_{t-1} | x_0)
    let prior_mean = mu + alpha_bar_prev.sqrt() * (x0 - mu);
    let prior_var = (1.0 - alpha_bar_prev) * var;
    // likelihood factor q(x_t | x_{t-1}) = N(mu + sqrt(a)(x - mu), (1-a) var)
    let sa = alpha_t.sqrt();
    let lik_var = (1.0 - alpha_t) * var;
    if prior_var == 0.0 {
        return Ok(QuadratureMoments {
            mean: prior_mean,
            variance: 0.0,
            span_sd: f64::INFINITY,
        });
    }
    if lik_var == 0.0 {
        return Ok(QuadratureMoments {
            mean: mu + (xt - mu) / sa,
            variance: 0.0,
            span_sd: f64::INFINITY,
        });
    }
    let log_density = |x: f64| {
        let r = xt - mu - sa * (x - mu);
        let p = x - prior_mean;
        -0.5 * (r * r / lik_var + p * p / prior_var)
    };
    let lik_center = mu + (xt - mu) / sa;
    let lik_sd = lik_var.sqrt() / sa;
    let prior_sd = prior_var.sqrt();
    let mut lo = (prior_mean - 8.0 * prior_sd).min(lik_center - 8.0 * lik_sd);
    let mut hi = (prior_mean + 8.0 * prior_sd).max(lik_center + 8.0 * lik_sd);
    let mut moments = QuadratureMoments {
        mean: f64::NAN,
        variance: f64::NAN,
        span_sd: 0.0,
    };
    for _ in 0..8 {
        let h = (hi - lo) / (grid_n - 1) as f64;
        let xs: Vec<f64> = (0..grid_n).map(|i| lo + h * i as f64).collect();
        let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let end = if i == 0 || i == grid_n - 1 { 0.5 } else { 1.0 };
                end * (l - peak).exp()
            })
            .collect();
        let z: f64 = w.iter().sum();
        let mean = w.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / z;
        let variance = w.iter().zip(&xs).map(|(w, x)| w * (x - mean) * (x - mean)).sum::<f64>() / z;
        let sd = variance.sqrt();
        let span = ((mean - lo).min(hi - mean)) / sd;
        moments = QuadratureMoments {
            mean,
            variance,
            span_sd: span,
        };
        // stable once the grid is centred and spans about +-8 sd
        if (8.0..=8.5).contains(&span) && h < sd / 8.0 {
            break;
        }
        lo = mean - 8.25 * sd;
        hi = mean + 8.25 * sd;
    }
    Ok(moments)
}

/// Compares the closed-form posterior mean and variance (from the
/// schedule's coefficient code) with [`posterior_by_quadrature`].
/// Discrepancy is the larger absolute error of the two moments.
pub fn posterior_bayes_oracle(
    alpha_t: f64,
    alpha_bar_prev: f64,
    mu: f64,
    var: f64,
    x0: f64,
    xt: f64,
    grid_n: usize,
) -> Result<OracleReport> {
    let quad = posterior_by_quadrature(alpha_t, alpha_bar_prev, mu, var, x0, xt, grid_n)?;
    let (sched, t) = if alpha_bar_prev == 1.0 {
        (NoiseSchedule::from_alphas(vec![alpha_t])?, 1)
    } else {
        (NoiseSchedule::from_alphas(vec![alpha_bar_prev, alpha_t])?, 2)
    };
    let c = sched.posterior_coeffs(t)?;
    let mean = posterior_mean(c, xt, x0, mu);
    let variance = c.beta_hat * var;
    let err = (mean - quad.mean).abs().max((variance - quad.variance).abs());
    Ok(OracleReport::new(
        "posterior_bayes",
        json!({
            "alpha_t": alpha_t, "alpha_bar_prev": alpha_bar_prev, "mu": mu,
            "var": var, "x0": x0, "xt": xt,
        }),
        err,
        1e-6,
        grid_n as u64,
    )
    .with_details(json!({
        "closed_mean": mean, "closed_var": variance,
        "quad_mean": quad.mean, "quad_var": quad.variance,
    })))
}

/// Many posterior oracles folded into one report (worst discrepancy).
pub fn posterior_sweep(sched: &NoiseSchedule, draws: usize, grid_n: usize, seed: u64) -> Result<OracleReport> {
    use rand::Rng;
    let mut rng = rng::stream(seed, "verify-posterior", 0);
    let mut worst = 0.0f64;
    let mut worst_params = Value::Null;
    for i in 0..draws {
        // alternate between schedule entries and free parameter draws
        let (alpha_t, alpha_bar_prev) = if i % 2 == 0 {
            let t = rng.random_range(1..=sched.steps());
            (sched.alpha(t), sched.alpha_bar(t - 1))
        } else {
            (rng.random_range(0.05..0.9999), rng.random_range(1e-4..1.0))
        };
        let mu: f64 = rng.random_range(-2.0..2.0);
        let var: f64 = rng.random_range(0.01..4.0);
        let x0 = mu + var.sqrt() * rng::normal(&mut rng);
        let xt = mu + var.sqrt() * rng::normal(&mut rng);
        let r = posterior_bayes_oracle(alpha_t, alpha_bar_prev, mu, var, x0, xt, grid_n)?;
        if !(r.discrepancy <= worst) {
            worst = r.discrepancy;
            worst_params = r.params.clone();
        }
    }
    Ok(OracleReport::new(
        "posterior_sweep",
        json!({"draws": draws, "T": sched.steps(), "seed": seed}),
        worst,
        1e-6,
        (draws * grid_n) as u64,
    )
    .with_details(json!({"worst_params": worst_params})))
}

/// Draws `n_draws` terminal states `x_T` from every `x0` and checks, per
/// component, that the empirical mean is within `z SE + sqrt(abar_T)
/// |x0 - mu|` of `mu` and the empirical variance within `z SE + abar_T var`
/// of `var`, where `z` gives the family-wise level of one 3-sigma test
/// across all comparisons. Zero-variance components must be identical in
/// every draw, and equal to `mu` exactly wherever `x0` is. For each pair of starts, the terminal mean gap must not exceed
/// `sqrt(abar_T) ||x0_a - x0_b|| + z SE_gap`.
///
/// Discrepancy is the worst standardized excess; tolerance is `z`.
pub fn terminal_law_check(
    stats: &ClassStats,
    sched: &NoiseSchedule,
    starts: &[SpectralField],
    n_draws: usize,
    seed: u64,
) -> Result<OracleReport> {
    if starts.is_empty() {
        return Err(Error::Empty {
            what: "terminal-law starting points",
        });
    }
    if n_draws < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: n_draws,
        });
    }
    for s in starts {
        stats.shape.expect(s.shape())?;
    }
    let k = stats.shape.len();
    let abar_t = running_products(sched.alphas())[sched.steps()];
    let sab = abar_t.sqrt();
    let n = n_draws as f64;
    let active = stats.var.iter().filter(|v| **v > 0.0).count();
    let pairs = starts.len() * (starts.len() - 1) / 2;
    let tests = 2 * active * starts.len() + pairs;
    let z = sidak_z(three_sigma_level(), tests);

    let mut worst = 0.0f64;
    let mut frozen_violations = 0usize;
    let mut means = Vec::with_capacity(starts.len());
    let mut buf = vec![0.0; k];
    for (j, x0) in starts.iter().enumerate() {
        let mut rng = rng::stream(seed, "verify-terminal", j as u64);
        let mut s1 = vec![0.0; k];
        let mut s2 = vec![0.0; k];
        let mut first: Option<Vec<f64>> = None;
        for _ in 0..n_draws {
            forward_closed_into(x0.values(), &stats.mu, &stats.var, abar_t, &mut rng, &mut buf);
            let reference = first.get_or_insert_with(|| buf.clone());
            for i in 0..k {
                let d = buf[i] - stats.mu[i];
                s1[i] += d;
                s2[i] += d * d;
                if stats.var[i] == 0.0 {
                    let pinned = x0.values()[i] == stats.mu[i];
                    if buf[i] != reference[i] || (pinned && buf[i] != stats.mu[i]) {
                        frozen_violations += 1;
                    }
                }
            }
        }
        let mut m = vec![0.0; k];
        for i in 0..k {
            let v = stats.var[i];
            m[i] = stats.mu[i] + s1[i] / n;
            if v == 0.0 {
                continue;
            }
            let emp_var = (s2[i] - s1[i] * s1[i] / n) / (n - 1.0);
            let se_mean = (v / n).sqrt();
            let se_var = v * (2.0 / (n - 1.0)).sqrt();
            let mean_excess = ((m[i] - stats.mu[i]).abs() - sab * (x0.values()[i] - stats.mu[i]).abs()) / se_mean;
            let var_excess = ((emp_var - v).abs() - abar_t * v) / se_var;
            worst = worst.max(mean_excess).max(var_excess);
        }
        means.push(m);
    }
    let se_gap = (2.0 * stats.var.iter().sum::<f64>() / n).sqrt();
    let mut worst_gap_excess = f64::NEG_INFINITY;
    for a in 0..starts.len() {
        for b in a + 1..starts.len() {
            let gap = l2(&means[a], &means[b]);
            let delta = l2(starts[a].values(), starts[b].values());
            if se_gap > 0.0 {
                let excess = (gap - sab * delta) / se_gap;
                worst_gap_excess = worst_gap_excess.max(excess);
                worst = worst.max(excess);
            }
        }
    }
    if frozen_violations > 0 {
        worst = f64::MAX;
    }
    Ok(OracleReport::new(
        "terminal_law",
        json!({
            "shape": stats.shape, "T": sched.steps(), "alpha_bar_T": abar_t,
            "starts": starts.len(), "seed": seed,
        }),
        worst,
        z,
        (n_draws * starts.len()) as u64,
    )
    .with_details(json!({
        "comparisons": tests,
        "frozen_violations": frozen_violations,
        "worst_gap_excess_se": if worst_gap_excess.is_finite() { json!(worst_gap_excess) } else { Value::Null },
    })))
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Drift multiplier `m_t = sqrt(abar_t) sum_{s<=t} lambda_s / sqrt(abar_s)`
/// by the recursion `m_t = sqrt(alpha_t) m_{t-1} + lambda_t`.
pub fn drift_multipliers(drift: &DriftSequence, sched: &NoiseSchedule, horizon: usize) -> Result<Vec<f64>> {
    if horizon > drift.len() || horizon > sched.steps() {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} exceeds drift length {} or T = {}",
            drift.len(),
            sched.steps()
        )));
    }
    let mut m = 0.0;
    Ok((0..horizon)
        .map(|i| {
            m = sched.alphas()[i].sqrt() * m + drift.values()[i];
            m
        })
        .collect())
}

/// With `lambda_t = 1 - sqrt(alpha_t)` the multiplier telescopes to
/// `1 - sqrt(abar_t)`. Checks this for every `t` against both the
/// recursion and the schedule's own drift sum, to `1e-12`.
pub fn drift_identity_check(sched: &NoiseSchedule) -> Result<OracleReport> {
    let drift = DriftSequence::matching(sched);
    let rec = drift_multipliers(&drift, sched, sched.steps())?;
    let abar = running_products(sched.alphas());
    let mut worst = 0.0f64;
    for t in 1..=sched.steps() {
        let want = 1.0 - abar[t].sqrt();
        let sum = sched.drift_coefficient_sum(&drift, t)?;
        worst = worst.max((rec[t - 1] - want).abs()).max((sum - want).abs());
    }
    Ok(OracleReport::new(
        "drift_identity",
        json!({"T": sched.steps()}),
        worst,
        1e-12,
        sched.steps() as u64,
    ))
}

/// Checks the drift-convergence claim over `horizon` steps.
///
/// The hypothesis is `lambda_{t+1} / lambda_t <= p < 1` for all `t` in the
/// horizon (p is the observed sup). When it holds, the check asserts that
/// the multiplier stays below `sum lambda` and that the tail of the
/// increment magnitudes `|m_t - m_{t-1}|` decays with a fitted geometric
/// ratio below 1. When it fails, the report passes with
/// `hypothesis_met = false` and no conclusion is drawn.
///
/// `ratio_bound_violations` counts steps where
/// `m_{t+1} / m_t > sqrt(alpha_{t+1}) + lambda_{t+1} / lambda_t`, and
/// `ratio_bound_sup` is the largest such bound. The bound can exceed 1, so
/// it does not by itself imply convergence; both are reported only.
pub fn drift_convergence_check(drift: &DriftSequence, sched: &NoiseSchedule, horizon: usize) -> Result<OracleReport> {
    if horizon < 100 {
        return Err(Error::InvalidParameter(format!("horizon {horizon} < 100")));
    }
    let m = drift_multipliers(drift, sched, horizon)?;
    let lam = &drift.values()[..horizon];
    let mut p = 0.0f64;
    for w in lam.windows(2) {
        // subnormal values carry no usable ratio
        let r = if w[0] >= f64::MIN_POSITIVE {
            w[1] / w[0]
        } else if w[1] >= f64::MIN_POSITIVE {
            f64::INFINITY
        } else {
            0.0
        };
        p = p.max(r);
    }
    let hypothesis_met = p < 1.0;
    let sup = m.iter().cloned().fold(0.0, f64::max);
    let budget: f64 = lam.iter().sum();
    let params = json!({"horizon": horizon, "T": sched.steps()});
    if !hypothesis_met {
        return Ok(
            OracleReport::new("drift_convergence", params, 0.0, 0.0, horizon as u64).with_details(json!({
                "hypothesis_met": false,
                "status": "ratio condition not satisfied; no conclusion",
                "observed_ratio_sup": p,
                "multiplier_sup": sup,
            })),
        );
    }
    let inc: Vec<f64> = std::iter::once(m[0])
        .chain(m.windows(2).map(|w| (w[1] - w[0]).abs()))
        .collect();
    let fitted = tail_geometric_ratio(&inc[horizon / 2..]);
    // m_{t+1} / m_t <= sqrt(alpha_{t+1}) + lambda_{t+1} / lambda_t
    let mut violations = 0usize;
    let mut bound_sup = 0.0f64;
    for t in 0..horizon - 1 {
        if m[t] > 0.0 && lam[t] > 0.0 {
            let bound = sched.alphas()[t + 1].sqrt() + lam[t + 1] / lam[t];
            bound_sup = bound_sup.max(bound);
            if m[t + 1] / m[t] > bound * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    // bounded by sum(lambda) and geometric tail decay
    let bound_excess = (sup - budget).max(0.0) / budget.max(f64::MIN_POSITIVE);
    let decay_excess = (fitted - 1.0).max(0.0);
    let discrepancy = if fitted.is_finite() {
        bound_excess.max(decay_excess)
    } else {
        0.0
    };
    Ok(
        OracleReport::new("drift_convergence", params, discrepancy, 1e-12, horizon as u64).with_details(json!({
            "hypothesis_met": true,
            "observed_ratio_sup": p,
            "multiplier_sup": sup,
            "lambda_sum": budget,
            "fitted_increment_ratio": if fitted.is_finite() { json!(fitted) } else { Value::Null },
            "ratio_bound_violations": violations,
            "ratio_bound_sup": bound_sup,
        })),
    )
}

/// `exp(slope)` of a least-squares line through `ln x_i`, over positive
/// entries. Infinite when fewer than two entries are positive.
fn tail_geometric_ratio(xs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, v)| (i as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::INFINITY;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxy / sxx).exp()
}

pub const MIN_DISTANCE_SAMPLES: usize = 32;

/// `||mu_g - mu_r||_2 + mean_k |ln((v_g + eps) / (v_r + eps))|` between the
/// spectral moments of `generated` and `reference`, with
/// `eps = max(1e-3 * mean(v_r), 1e-12)`.
pub fn spectral_moment_distance(generated: &[PixelField], reference: &ClassStats) -> Result<f64> {
    if generated.len() < MIN_DISTANCE_SAMPLES {
        return Err(Error::TooFewSamples {
            required: MIN_DISTANCE_SAMPLES,
            actual: generated.len(),
        });
    }
    let spectra = to_spectral_batch(generated)?;
    let fit = fit_class_stats(&spectra, None)?;
    moment_distance(&fit, reference)
}

/// [`spectral_moment_distance`] between two fitted stats objects.
pub fn moment_distance(a: &ClassStats, b: &ClassStats) -> Result<f64> {
    a.shape.expect(b.shape)?;
    let k = b.var.len() as f64;
    let eps = (1e-3 * b.var.iter().sum::<f64>() / k).max(1e-12);
    let mean_gap = l2(&a.mu, &b.mu);
    let log_ratio = a
        .var
        .iter()
        .zip(&b.var)
        .map(|(g, r)| ((g + eps) / (r + eps)).ln().abs())
        .sum::<f64>()
        / k;
    Ok(mean_gap + log_ratio)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    All,
    Forward,
    Posterior,
    Terminal,
    Drift,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "forward" => Suite::Forward,
            "posterior" => Suite::Posterior,
            "terminal" => Suite::Terminal,
            "drift" => Suite::Drift,
            other => return Err(Error::InvalidParameter(format!("unknown suite {other:?}"))),
        })
    }
}

/// Default schedule for the suite: cosine, `T = 1000`, `abar_T <= 1e-5`.
pub fn default_schedule() -> NoiseSchedule {
    NoiseSchedule::cosine(1000, crate::schedule::DEFAULT_TERMINAL_EPS).expect("valid default schedule")
}

/// Synthetic 16x16 stats: means uniform in `[-1, 1)`, variances
/// log-uniform in `[1e-3, 1]`, and every 16th component frozen.
pub fn synthetic_stats(seed: u64) -> ClassStats {
    use rand::Rng;
    let shape = crate::field::Shape::new(1, 16, 16).expect("valid shape");
    let mut r = rng::stream(seed, "verify-synthetic", 0);
    let k = shape.len();
    let mu: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut var: Vec<f64> = (0..k).map(|_| 10f64.powf(r.random_range(-3.0..0.0))).collect();
    for v in var.iter_mut().step_by(16) {
        *v = 0.0;
    }
    ClassStats::from_moments(shape, mu, var).expect("valid synthetic stats")
}

/// Runs the selected checks with their reference parameters.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<OracleReport>> {
    let mut out = Vec::new();
    let sched = default_schedule();
    let want = |s: Suite| suite == Suite::All || suite == s;
    if want(Suite::Forward) {
        let c = NoiseSchedule::constant(500, 0.99)?;
        out.push(mc_forward_consistency(&c, 5.0, 1.0, 10.0, 100_000, seed)?);
        out.push(mc_forward_consistency(&c, 0.5, 0.0, 1.0, 1_000, seed)?);
    }
    if want(Suite::Posterior) {
        out.push(posterior_bayes_oracle(0.8, 0.9, 0.5, 2.0, 1.0, 0.7, 20_001)?);
        out.push(posterior_sweep(&sched, 1000, 20_001, seed)?);
    }
    if want(Suite::Terminal) {
        let stats = synthetic_stats(seed);
        let shape = stats.shape;
        // data-like starts: equal to mu wherever the variance is zero
        let offset = |scale: f64| -> Result<SpectralField> {
            let v = stats
                .mu
                .iter()
                .zip(&stats.var)
                .map(|(m, v)| m + scale * v.sqrt())
                .collect();
            SpectralField::new(shape, v)
        };
        let starts = [stats.mean_field(), offset(3.0)?, offset(-2.0)?];
        out.push(terminal_law_check(&stats, &sched, &starts, 100_000, seed)?);
    }
    if want(Suite::Drift) {
        out.push(drift_identity_check(&sched)?);
        let long = NoiseSchedule::constant(10_000, 0.999)?;
        out.push(drift_convergence_check(
            &DriftSequence::geometric(1.0, 0.9, 10_000)?,
            &long,
            10_000,
        )?);
        out.push(drift_convergence_check(
            &DriftSequence::constant(0.01, 10_000)?,
            &long,
            10_000,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Shape;

    #[test]
    fn worked_scalar_posterior_by_quadrature() {
        // alpha = [0.9, 0.8], t = 2: hand-evaluated mean 0.902704, var 0.142857
        let q = posterior_by_quadrature(0.8, 0.9, 0.5, 2.0, 1.0, 0.7, 20_001).unwrap();
        assert!((q.mean - 0.902704).abs() < 1e-6, "{}", q.mean);
        assert!((q.variance - 0.142857).abs() < 1e-6, "{}", q.variance);
        let r = posterior_bayes_oracle(0.8, 0.9, 0.5, 2.0, 1.0, 0.7, 20_001).unwrap();
        assert!(r.pass && r.discrepancy < 1e-9, "{r:?}");
    }

    #[test]
    fn zero_mean_posterior_matches_ddpm_formula() {
        let (a, abp) = (0.95, 0.6);
        let ab = a * abp;
        let beta = 1.0 - a;
        for (x0, xt) in [(1.0, 0.3), (-0.4, 2.0)] {
            let q = posterior_by_quadrature(a, abp, 0.0, 1.0, x0, xt, 20_001).unwrap();
            let mean = abp.sqrt() * beta / (1.0 - ab) * x0 + a.sqrt() * (1.0 - abp) / (1.0 - ab) * xt;
            let var = (1.0 - abp) / (1.0 - ab) * beta;
            assert!((q.mean - mean).abs() < 1e-9);
            assert!((q.variance - var).abs() < 1e-9);
        }
    }

    #[test]
    fn posterior_at_the_mean_stays_put() {
        let r = posterior_bayes_oracle(0.7, 0.4, 1.5, 0.3, 1.5, 1.5, 10_001).unwrap();
        let closed = r.details["closed_mean"].as_f64().unwrap();
        assert!((closed - 1.5).abs() < 1e-10);
        assert!(r.pass);
    }

    #[test]
    fn quadrature_handles_far_off_and_degenerate_inputs() {
        // likelihood and prior far apart and of very different widths
        let r = posterior_bayes_oracle(0.999, 0.01, 0.0, 1.0, 50.0, -30.0, 10_001).unwrap();
        assert!(r.pass, "{r:?}");
        let q = posterior_by_quadrature(0.9, 1.0, 0.0, 1.0, 2.0, 0.0, 101).unwrap();
        assert_eq!((q.mean, q.variance), (2.0, 0.0));
    }

    #[test]
    fn forward_with_zero_variance_is_deterministic() {
        let s = NoiseSchedule::constant(50, 0.9).unwrap();
        let r = mc_forward_consistency(&s, 0.5, 0.0, 2.0, 1000, 3).unwrap();
        assert!(r.pass && r.discrepancy < 1e-12, "{r:?}");
    }

    #[test]
    fn forward_from_the_mean_keeps_mean() {
        let s = NoiseSchedule::constant(100, 0.98).unwrap();
        let r = mc_forward_consistency(&s, 2.0, 0.5, 2.0, 20_000, 1).unwrap();
        assert!(r.details["worst_mean_rel_err"].as_f64().unwrap() < 0.01);
    }

    #[test]
    fn sidak_reduces_to_single_test() {
        assert!((sidak_z(three_sigma_level(), 1) - 3.0).abs() < 1e-9);
        assert!(sidak_z(three_sigma_level(), 1000) > 4.0);
    }

    #[test]
    fn drift_examples() {
        let sched = NoiseSchedule::cosine(500, 1e-5).unwrap();
        assert!(drift_identity_check(&sched).unwrap().pass);

        let long = NoiseSchedule::constant(1000, 0.99).unwrap();
        let r = drift_convergence_check(&DriftSequence::geometric(1.0, 0.9, 1000).unwrap(), &long, 1000).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.details["hypothesis_met"], true);
        assert_eq!(r.details["ratio_bound_violations"], 0);
        // the bound sqrt(alpha) + p exceeds 1 here although the sequence converges
        assert!(r.details["ratio_bound_sup"].as_f64().unwrap() > 1.0);
        assert!(r.details["multiplier_sup"].as_f64().unwrap() <= 10.0);

        let flat = drift_convergence_check(&DriftSequence::constant(0.1, 1000).unwrap(), &long, 1000).unwrap();
        assert_eq!(flat.details["hypothesis_met"], false);
        assert!(flat.pass);
        assert!(drift_convergence_check(&DriftSequence::constant(0.1, 50).unwrap(), &long, 50).is_err());
    }

    #[test]
    fn moment_distance_properties() {
        let shape = Shape::new(1, 4, 4).unwrap();
        let stats = ClassStats::from_moments(shape, vec![0.5; 16], vec![0.1; 16]).unwrap();
        let zeros = vec![PixelField::zeros(shape); 40];
        let d = spectral_moment_distance(&zeros, &stats).unwrap();
        assert!(d >= 0.5 * 4.0);
        assert!(matches!(
            spectral_moment_distance(&zeros[..10], &stats),
            Err(Error::TooFewSamples {
                required: 32,
                actual: 10
            })
        ));
        assert_eq!(moment_distance(&stats, &stats).unwrap(), 0.0);
    }

    #[test]
    fn report_json_line() {
        let r = OracleReport::new("x", json!({"a": 1}), 0.5, 1.0, 10);
        let line = r.to_json_line();
        assert!(!line.contains('\n'));
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["pass"], true);
        assert!(v.get("details").is_none());
    }
}
