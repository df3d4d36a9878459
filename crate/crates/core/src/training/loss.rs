use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::stats::ClassStats;

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-3;

fn check(pred: &SpectralField, target: &SpectralField, stats: &ClassStats, floor: f64) -> Result<()> {
    pred.shape().expect(target.shape())?;
    stats.shape.expect(pred.shape())?;
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("variance floor {floor} must be > 0")));
    }
    Ok(())
}

/// Squared spectral error divided by `max(var_k, floor)`, averaged over the
/// `K` components of each channel and then over channels.
pub fn weighted_loss(pred: &SpectralField, target: &SpectralField, stats: &ClassStats, floor: f64) -> Result<f64> {
    check(pred, target, stats, floor)?;
    let n = pred.values().len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(target.values())
        .zip(&stats.var)
        .map(|((p, x), v)| (p - x) * (p - x) / v.max(floor))
        .sum::<f64>()
        / n)
}

/// Loss and its gradient with respect to `pred`.
pub fn weighted_loss_grad(
    pred: &SpectralField,
    target: &SpectralField,
    stats: &ClassStats,
    floor: f64,
) -> Result<(f64, SpectralField)> {
    check(pred, target, stats, floor)?;
    let n = pred.values().len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .values()
        .iter()
        .zip(target.values())
        .zip(&stats.var)
        .map(|((p, x), v)| {
            let w = v.max(floor);
            let d = p - x;
            loss += d * d / w;
            2.0 * d / (w * n)
        })
        .collect();
    Ok((loss / n, SpectralField::from_raw(pred.shape(), grad)))
}
