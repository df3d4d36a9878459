//! Noise schedules and the scalar coefficient algebra shared by the forward
//! and backward processes. Timesteps are 1-indexed with `alpha_bar_0 = 1`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TERMINAL_EPS: f64 = 1e-5;
const COSINE_OFFSET: f64 = 0.008;
const ALPHA_MIN: f64 = 1e-8;
const ALPHA_MAX: f64 = 0.9999;

/// Unclipped squared-cosine curve at normalized time `tau = t / T`, scaled
/// so that it is 1 at `tau = 0`.
pub fn cosine_alpha_bar(tau: f64) -> f64 {
    let f = |tau: f64| {
        ((tau + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2)
            .cos()
            .powi(2)
    };
    f(tau) / f(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleDoc {
    #[serde(rename = "T")]
    steps: usize,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Affine weights of the backward posterior mean,
/// `mean = a * x_t + b * x_0 + gamma * mu`, and its variance scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorCoeffs {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub beta_hat: f64,
}

impl NoiseSchedule {
    /// Builds a schedule from per-step `alpha_t`, `t = 1..=T`.
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Empty { what: "schedule" });
        }
        if let Some((i, a)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0 && **a <= 1.0))
        {
            return Err(Error::InvalidParameter(format!("alpha_{} = {a} outside (0, 1]", i + 1)));
        }
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule { alpha, alpha_bar })
    }

    /// Squared-cosine `alpha_bar` curve with offset 0.008, per-step alphas
    /// clipped to `[1e-8, 0.9999]`, and the final step clamped so that
    /// `alpha_bar_T <= terminal_eps`.
    pub fn cosine(steps: usize, terminal_eps: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("schedule needs T >= 1".into()));
        }
        if !(terminal_eps > 0.0 && terminal_eps < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "terminal_eps = {terminal_eps} outside (0, 1)"
            )));
        }
        let f = |t: usize| cosine_alpha_bar(t as f64 / steps as f64);
        let mut alpha: Vec<f64> = (1..=steps)
            .map(|t| f(t) / f(t - 1))
            .map(|a| if a.is_finite() { a } else { ALPHA_MIN })
            .map(|a| a.clamp(ALPHA_MIN, ALPHA_MAX))
            .collect();
        let before_last: f64 = alpha[..steps - 1].iter().product();
        if before_last * alpha[steps - 1] > terminal_eps {
            alpha[steps - 1] = (terminal_eps / before_last).clamp(ALPHA_MIN, ALPHA_MAX);
        }
        Self::from_alphas(alpha)
    }

    /// `T` copies of the same `alpha`.
    pub fn constant(steps: usize, alpha: f64) -> Result<Self> {
        Self::from_alphas(vec![alpha; steps])
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    /// `alpha_t` for `1 <= t <= T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar_t` for `0 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha(t)
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Same schedule cut to its first `steps` steps.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t: steps,
                max: self.steps(),
            });
        }
        Self::from_alphas(self.alpha[..steps].to_vec())
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::TimestepOutOfRange { t, max: self.steps() })
        } else {
            Ok(())
        }
    }

    fn base_coeffs(&self, t: usize) -> Result<(f64, f64, f64, f64)> {
        self.check_step(t)?;
        let alpha = self.alpha(t);
        let ab_prev = self.alpha_bar(t - 1);
        let one_minus_ab = 1.0 - self.alpha_bar(t);
        if one_minus_ab <= 0.0 {
            return Err(Error::DegeneratePosterior { t });
        }
        Ok((alpha, ab_prev, self.beta(t), one_minus_ab))
    }

    /// Feature-preserving posterior `q(x_{t-1} | x_t, x_0)` coefficients.
    pub fn posterior_coeffs(&self, t: usize) -> Result<PosteriorCoeffs> {
        let (alpha, ab_prev, beta, denom) = self.base_coeffs(t)?;
        let sa = alpha.sqrt();
        let sab_prev = ab_prev.sqrt();
        Ok(PosteriorCoeffs {
            a: sa * (1.0 - ab_prev) / denom,
            b: sab_prev * beta / denom,
            gamma: (1.0 - sab_prev) * beta / denom - (1.0 - ab_prev) * (sa - alpha) / denom,
            beta_hat: beta * (1.0 - ab_prev) / denom,
        })
    }

    /// DDPM posterior: same `a`, `b` and variance scale, no mean pull.
    pub fn ddpm_posterior_coeffs(&self, t: usize) -> Result<PosteriorCoeffs> {
        let (alpha, ab_prev, beta, denom) = self.base_coeffs(t)?;
        Ok(PosteriorCoeffs {
            a: alpha.sqrt() * (1.0 - ab_prev) / denom,
            b: ab_prev.sqrt() * beta / denom,
            gamma: 0.0,
            beta_hat: (1.0 - ab_prev) * beta / denom,
        })
    }

    /// Multiplier of `mu` in the mean of `q(x_t | x_0)` for the generalized
    /// forward drift `N(lambda_t * mu, (1 - alpha_t) Sigma)`:
    /// `sqrt(alpha_bar_t) * sum_{s<=t} lambda_s / sqrt(alpha_bar_s)`.
    pub fn drift_coefficient_sum(&self, drift: &DriftSequence, t: usize) -> Result<f64> {
        self.check_step(t)?;
        if drift.len() < t {
            return Err(Error::InvalidParameter(format!(
                "drift sequence has {} entries, need {t}",
                drift.len()
            )));
        }
        // sqrt(alpha_bar_t / alpha_bar_s) through log space so long
        // horizons do not underflow alpha_bar_s.
        let log_ab: Vec<f64> = self.alpha[..t]
            .iter()
            .scan(0.0, |acc, a| {
                *acc += a.ln();
                Some(*acc)
            })
            .collect();
        let last = log_ab[t - 1];
        Ok(drift.values()[..t]
            .iter()
            .zip(&log_ab)
            .map(|(lambda, la)| lambda * (0.5 * (last - la)).exp())
            .sum())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScheduleDoc {
            steps: self.steps(),
            alpha: self.alpha.clone(),
            alpha_bar: self.alpha_bar.clone(),
        })?)
    }

    /// Parses the schedule document and checks that `alpha_bar` is the
    /// running product of `alpha`.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScheduleDoc = serde_json::from_str(text)?;
        if doc.alpha.len() != doc.steps || doc.alpha_bar.len() != doc.steps {
            return Err(Error::malformed(
                "schedule",
                format!(
                    "T = {} but {} alphas and {} alpha_bars",
                    doc.steps,
                    doc.alpha.len(),
                    doc.alpha_bar.len()
                ),
            ));
        }
        let sched = Self::from_alphas(doc.alpha)?;
        for (t, (got, want)) in doc.alpha_bar.iter().zip(&sched.alpha_bar).enumerate() {
            if (got - want).abs() > 1e-12 * want.abs().max(1e-300) {
                return Err(Error::malformed(
                    "schedule",
                    format!("alpha_bar_{} = {got} is not the running product {want}", t + 1),
                ));
            }
        }
        Ok(sched)
    }
}

/// Mean-drift weights `lambda_t` of the generalized forward process.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftSequence(Vec<f64>);

impl DriftSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "drift weights must be finite and nonnegative".into(),
            ));
        }
        Ok(DriftSequence(values))
    }

    /// `lambda_t = 1 - sqrt(alpha_t)`, the feature-preserving drift.
    pub fn matching(sched: &NoiseSchedule) -> Self {
        DriftSequence(sched.alphas().iter().map(|a| 1.0 - a.sqrt()).collect())
    }

    /// `lambda_t = scale * ratio^t`.
    pub fn geometric(scale: f64, ratio: f64, len: usize) -> Result<Self> {
        Self::new((1..=len).map(|t| scale * ratio.powi(t as i32)).collect())
    }

    pub fn constant(value: f64, len: usize) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NoiseSchedule {
        NoiseSchedule::from_alphas(vec![0.9, 0.8]).unwrap()
    }

    #[test]
    fn worked_two_step_example() {
        let c = toy().posterior_coeffs(2).unwrap();
        assert!((c.a - 0.319438).abs() < 1e-6, "{}", c.a);
        assert!((c.b - 0.677631).abs() < 1e-6, "{}", c.b);
        assert!((c.gamma - 0.002931).abs() < 1e-6, "{}", c.gamma);
        assert!((c.beta_hat - 0.0714286).abs() < 1e-7, "{}", c.beta_hat);
        let d = toy().ddpm_posterior_coeffs(2).unwrap();
        assert_eq!(d.gamma, 0.0);
        assert!((d.beta_hat - c.beta_hat).abs() < 1e-15);
    }

    #[test]
    fn first_step_has_no_pull_and_no_variance() {
        let s = toy();
        let c = s.posterior_coeffs(1).unwrap();
        assert_eq!(c.gamma, 0.0);
        assert_eq!(c.beta_hat, 0.0);
        assert!((c.b - 0.1 / (1.0 - 0.9)).abs() < 1e-12);
        assert!((c.a + c.b - 1.0).abs() < 1e-15);
        assert_eq!(s.ddpm_posterior_coeffs(1).unwrap().beta_hat, 0.0);
    }

    #[test]
    fn ddpm_weights_do_not_sum_to_one() {
        let s = toy();
        let d = s.ddpm_posterior_coeffs(2).unwrap();
        let (a, ab1, ab2) = (0.8f64, 0.9f64, 0.72f64);
        let expected = (a.sqrt() * (1.0 - ab1) + ab1.sqrt() * 0.2) / (1.0 - ab2);
        assert!((d.a + d.b - expected).abs() < 1e-15);
        assert!((d.a + d.b - 1.0).abs() > 1e-3);
    }

    #[test]
    fn out_of_range_and_degenerate_steps() {
        let s = toy();
        assert!(matches!(s.posterior_coeffs(0), Err(Error::TimestepOutOfRange { .. })));
        assert!(matches!(s.posterior_coeffs(3), Err(Error::TimestepOutOfRange { .. })));
        let frozen = NoiseSchedule::from_alphas(vec![1.0, 0.5]).unwrap();
        assert!(matches!(
            frozen.posterior_coeffs(1),
            Err(Error::DegeneratePosterior { t: 1 })
        ));
        assert!(frozen.posterior_coeffs(2).is_ok());
    }

    #[test]
    fn cosine_single_step_meets_terminal_bound() {
        let s = NoiseSchedule::cosine(1, 1e-5).unwrap();
        assert_eq!(s.steps(), 1);
        assert!(s.alpha_bar(1) <= 1e-5);
        assert!(NoiseSchedule::cosine(0, 1e-5).is_err());
        assert!(NoiseSchedule::cosine(10, 0.0).is_err());
    }

    #[test]
    fn cosine_500_is_strictly_decreasing() {
        let s = NoiseSchedule::cosine(500, DEFAULT_TERMINAL_EPS).unwrap();
        // f(1)/f(0) evaluated by hand is 0.99996..., clipped to 0.9999
        assert!(s.alpha_bar(1) > 0.99);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(500) <= DEFAULT_TERMINAL_EPS);
        let prod: f64 = s.alphas().iter().product();
        assert!((prod - s.alpha_bar(500)).abs() <= 1e-12 * s.alpha_bar(500));
    }

    #[test]
    fn drift_sums() {
        let s = NoiseSchedule::cosine(100, 1e-5).unwrap();
        let m = DriftSequence::matching(&s);
        for t in [1, 7, 50, 100] {
            let got = s.drift_coefficient_sum(&m, t).unwrap();
            assert!((got - (1.0 - s.alpha_bar(t).sqrt())).abs() < 1e-12);
        }
        let zero = DriftSequence::constant(0.0, 100).unwrap();
        assert_eq!(s.drift_coefficient_sum(&zero, 40).unwrap(), 0.0);

        let c = NoiseSchedule::constant(200, 0.99).unwrap();
        let g = DriftSequence::geometric(1.0, 0.5, 200).unwrap();
        let seq: Vec<f64> = (1..=200).map(|t| c.drift_coefficient_sum(&g, t).unwrap()).collect();
        assert!(seq[49].is_finite());
        // converges: late increments vanish
        assert!((seq[199] - seq[198]).abs() < (seq[50] - seq[49]).abs());
        assert!(seq.iter().all(|v| *v <= 1.0));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let s = NoiseSchedule::cosine(20, 1e-5).unwrap();
        let back = NoiseSchedule::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
        let bad = r#"{"T": 2, "alpha": [0.9, 0.8], "alpha_bar": [0.9, 0.7]}"#;
        assert!(NoiseSchedule::from_json(bad).is_err());
        let extra = r#"{"T": 1, "alpha": [0.9], "alpha_bar": [0.9], "x": 1}"#;
        assert!(NoiseSchedule::from_json(extra).is_err());
    }
}
