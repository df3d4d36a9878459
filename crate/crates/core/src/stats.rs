//! Per-component spectral statistics, invariant-component counts and
//! power-law fitting of radial spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Shape, SpectralField};
use crate::spectral::{self, RadialProfile};

/// Streaming mean / population variance per component (Welford), mergeable
/// across shards with Chan's pairwise update.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsAccumulator {
    shape: Shape,
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(shape: Shape) -> Self {
        StatsAccumulator {
            shape,
            n: 0,
            mean: vec![0.0; shape.len()],
            m2: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, sample: &SpectralField) -> Result<()> {
        self.shape.expect(sample.shape())?;
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample.values()) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<()> {
        self.shape.expect(other.shape)?;
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn finish(&self, label: Option<String>) -> Result<ClassStats> {
        if self.n == 0 {
            return Err(Error::Empty { what: "sample stream" });
        }
        let n = self.n as f64;
        Ok(ClassStats {
            label,
            shape: self.shape,
            mu: self.mean.clone(),
            var: self.m2.iter().map(|s| (s / n).max(0.0)).collect(),
            n: self.n,
            padding: None,
        })
    }
}

/// Spectral mean and diagonal variance of one class (or the whole dataset).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassStats {
    pub label: Option<String>,
    pub shape: Shape,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub n: u64,
    /// Zero border added around the source images before transforming,
    /// as `[top, bottom, left, right]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<[usize; 4]>,
}

impl ClassStats {
    /// Builds stats from explicit moments; used for synthetic targets.
    pub fn from_moments(shape: Shape, mu: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        let stats = ClassStats {
            label: None,
            shape,
            mu,
            var,
            n: 1,
            padding: None,
        };
        stats.validate()?;
        Ok(stats)
    }

    /// `mu = 0`, `var = 1` everywhere: the white-noise target.
    pub fn standard(shape: Shape) -> Self {
        ClassStats {
            label: None,
            shape,
            mu: vec![0.0; shape.len()],
            var: vec![1.0; shape.len()],
            n: 1,
            padding: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.shape.len();
        if self.mu.len() != len || self.var.len() != len {
            return Err(Error::malformed(
                "class stats",
                format!(
                    "shape {} needs {len} entries, got mu={} var={}",
                    self.shape,
                    self.mu.len(),
                    self.var.len()
                ),
            ));
        }
        if self.n == 0 {
            return Err(Error::malformed("class stats", "sample count is 0"));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::malformed("class stats", "non-finite mean"));
        }
        if self.var.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::malformed(
                "class stats",
                "variance must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    pub fn mean_field(&self) -> SpectralField {
        SpectralField::from_raw(self.shape, self.mu.clone())
    }

    pub fn std(&self) -> impl Iterator<Item = f64> + '_ {
        self.var.iter().map(|v| v.sqrt())
    }

    /// Radial profile of `E|X(k)|^2 = mu^2 + var` summed over slot pairs.
    pub fn power_profile(&self, n_bins: usize) -> Result<RadialProfile> {
        let second: Vec<f64> = self.mu.iter().zip(&self.var).map(|(m, v)| m * m + v).collect();
        let (h, w) = (self.shape.height, self.shape.width);
        let mut power = vec![0.0; second.len()];
        for c in 0..self.shape.channels {
            for r in 0..h {
                for col in 0..w {
                    let i = self.shape.index(c, r, col);
                    power[i] = second[i]
                        + spectral::partner(r, col, h, w).map_or(0.0, |(pr, pc)| second[self.shape.index(c, pr, pc)]);
                }
            }
        }
        spectral::radial_profile_from_power(self.shape, &power, n_bins)
    }

    /// Radial profile of the per-component standard deviation.
    pub fn std_profile(&self, n_bins: usize) -> Result<RadialProfile> {
        let std: Vec<f64> = self.std().collect();
        spectral::radial_profile_from_power(self.shape, &std, n_bins)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stats: ClassStats = serde_json::from_str(text)?;
        stats.validate()?;
        Ok(stats)
    }
}

/// One-pass mean and population variance of a stream of spectral fields.
pub fn fit_class_stats<'a, I>(samples: I, label: Option<String>) -> Result<ClassStats>
where
    I: IntoIterator<Item = &'a SpectralField>,
{
    let mut iter = samples.into_iter();
    let first = iter.next().ok_or(Error::Empty { what: "sample stream" })?;
    let mut acc = StatsAccumulator::new(first.shape());
    acc.push(first)?;
    for s in iter {
        acc.push(s)?;
    }
    acc.finish(label)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub label: Option<String>,
    pub threshold: f64,
    pub exact_zero: usize,
    pub near_zero: usize,
    pub total: usize,
}

impl InvarianceReport {
    pub const CSV_HEADER: &'static str = "label,threshold,exact_zero,near_zero";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{},{}",
            self.label.as_deref().unwrap_or("all"),
            self.threshold,
            self.exact_zero,
            self.near_zero
        )
    }
}

/// Counts components whose standard deviation is exactly zero and those at
/// or below `threshold`.
pub fn count_invariant(stats: &ClassStats, threshold: f64) -> Result<InvarianceReport> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} must be >= 0")));
    }
    let (mut exact_zero, mut near_zero) = (0, 0);
    for s in stats.std() {
        if s == 0.0 {
            exact_zero += 1;
        }
        if s <= threshold {
            near_zero += 1;
        }
    }
    Ok(InvarianceReport {
        label: stats.label.clone(),
        threshold,
        exact_zero,
        near_zero,
        total: stats.var.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Decay exponent: `power ~ |k|^(-exponent)`.
    pub exponent: f64,
    pub k_min: f64,
    pub k_max: f64,
    /// RMS residual of the log-log regression.
    pub residual: f64,
    pub bins_used: usize,
}

/// Least-squares line through `(ln |k|, ln power)` for bins with positive
/// power and radius in `[k_min, k_max]`.
pub fn power_law_fit(profile: &RadialProfile, k_min: f64, k_max: f64) -> Result<PowerLawFit> {
    let pts: Vec<(f64, f64)> = profile
        .bins
        .iter()
        .filter(|b| b.radius > 0.0 && b.radius >= k_min && b.radius <= k_max && b.power > 0.0)
        .map(|b| (b.radius.ln(), b.power.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientBins { found: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PowerLawFit {
        exponent: -slope,
        k_min,
        k_max,
        residual,
        bins_used: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::RadialBin;

    fn field(values: Vec<f64>) -> SpectralField {
        SpectralField::new(Shape::new(1, 2, 2).unwrap(), values).unwrap()
    }

    #[test]
    fn identical_samples_have_zero_variance() {
        let v = field(vec![0.1, -2.0, 3.5, 0.0]);
        let stats = fit_class_stats(std::iter::repeat_n(&v, 5), None).unwrap();
        assert_eq!(stats.mu, v.values());
        assert!(stats.var.iter().all(|&s| s == 0.0));
        let report = count_invariant(&stats, 1e-3).unwrap();
        assert_eq!((report.exact_zero, report.near_zero), (4, 4));
    }

    #[test]
    fn symmetric_pair() {
        let v = field(vec![0.5, -1.0, 2.0, 0.0]);
        let neg = field(v.values().iter().map(|x| -x).collect());
        let stats = fit_class_stats([&v, &neg], Some("pair".into())).unwrap();
        for i in 0..4 {
            assert!(stats.mu[i].abs() < 1e-15);
            assert!((stats.var[i] - v.values()[i].powi(2)).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_and_mismatched_streams() {
        let none: [&SpectralField; 0] = [];
        assert!(matches!(fit_class_stats(none, None), Err(Error::Empty { .. })));
        let a = field(vec![0.0; 4]);
        let b = SpectralField::zeros(Shape::new(1, 2, 4).unwrap());
        assert!(matches!(
            fit_class_stats([&a, &b], None),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn stats_json_round_trip_and_rejects_bad_documents() {
        let v = field(vec![0.5, -1.0, 2.0, 0.0]);
        let stats = fit_class_stats([&v], Some("7".into())).unwrap();
        let back = ClassStats::from_json(&stats.to_json().unwrap()).unwrap();
        assert_eq!(stats, back);
        let neg_var = r#"{"label":null,"shape":[1,2,2],"mu":[0,0,0,0],"var":[0,-1,0,0],"n":1}"#;
        assert!(ClassStats::from_json(neg_var).is_err());
        let short = r#"{"label":null,"shape":[1,2,2],"mu":[0,0,0],"var":[0,0,0,0],"n":1}"#;
        assert!(ClassStats::from_json(short).is_err());
    }

    fn profile(power: impl Fn(f64) -> f64) -> RadialProfile {
        RadialProfile {
            bins: (1..=40)
                .map(|i| {
                    let r = i as f64 * 0.5;
                    RadialBin {
                        radius: r,
                        power: power(r),
                        count: 1,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn power_law_recovers_constructed_exponents() {
        let fit = power_law_fit(&profile(|k| 3.0 * k.powf(-2.0)), 0.0, f64::INFINITY).unwrap();
        assert!((fit.exponent - 2.0).abs() < 0.05);
        let fit = power_law_fit(&profile(|_| 0.7), 0.0, f64::INFINITY).unwrap();
        assert!(fit.exponent.abs() < 0.05);
        let fit = power_law_fit(&profile(|k| k.powf(-3.5)), 1.0, 10.0).unwrap();
        assert!((fit.exponent - 3.5).abs() < 0.1);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn power_law_needs_three_bins() {
        let p = profile(|k| k.powf(-2.0));
        assert!(matches!(
            power_law_fit(&p, 1.0, 1.9),
            Err(Error::InsufficientBins { found: 2 })
        ));
        let zero = profile(|_| 0.0);
        assert!(power_law_fit(&zero, 0.0, 100.0).is_err());
    }
}
