//! Pixel space <-> real-packed spectral space.
//!
//! The forward transform is the 2-D DFT with `1/(N1*N2)` normalization,
//!
//! ```text
//! X(k1, k2) = 1/(N1 N2) * sum x(n1, n2) exp(-i 2pi (n1 k1 / N1 + n2 k2 / N2))
//!           = R(k1, k2) - i S(k1, k2)
//! ```
//!
//! where `R` is the cosine sum and `S` the sine sum. A real image has
//! `X(-k) = conj X(k)`, so half of the spectrum is redundant and the rest fits
//! into a real array of the image's own shape. Slots are indexed in FFT order:
//! row `r` is wavenumber `k1 = r` for `r <= N1/2` and `r - N1` above that, and
//! likewise for columns.
//!
//! | slot `(k1, k2)`                         | stores          |
//! |-----------------------------------------|-----------------|
//! | `0 < k2 < N2/2`                          | `R(k1, k2)`     |
//! | `k2 < 0`                                 | `S(k1, -k2)`    |
//! | `k2 in {0, N2/2}`, `k1 >= 0`             | `R(k1, k2)`     |
//! | `k2 in {0, N2/2}`, `k1 < 0`              | `S(-k1, k2)`    |
//!
//! The four self-conjugate frequencies `(0,0)`, `(N1/2,0)`, `(0,N2/2)` and
//! `(N1/2,N2/2)` are purely real and fall in the `R` rows of the last two
//! lines. Every other frequency is represented exactly once by an `(R, S)`
//! slot pair, which makes the packing a bijection of `R^(N1 x N2)`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{PixelField, Shape, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SlotRole {
    /// Cosine sum (real part) of the frequency stored at this FFT-order index.
    Real { row: usize, col: usize },
    /// Sine sum (negated imaginary part) of the frequency at this FFT-order index.
    Sine { row: usize, col: usize },
}

#[inline]
fn signed(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[inline]
fn mirror(i: usize, n: usize) -> usize {
    (n - i) % n
}

/// Wavenumber pair `(k1, k2)` of slot `(r, c)` on an `h x w` grid.
pub fn wavenumber(r: usize, c: usize, h: usize, w: usize) -> (i64, i64) {
    (signed(r, h), signed(c, w))
}

/// Which spectral quantity slot `(r, c)` holds.
pub fn slot_role(r: usize, c: usize, h: usize, w: usize) -> SlotRole {
    let k1 = signed(r, h);
    let k2 = signed(c, w);
    if c == 0 || c == w / 2 {
        if k1 >= 0 {
            SlotRole::Real { row: r, col: c }
        } else {
            SlotRole::Sine {
                row: mirror(r, h),
                col: c,
            }
        }
    } else if k2 > 0 {
        SlotRole::Real { row: r, col: c }
    } else {
        SlotRole::Sine {
            row: r,
            col: mirror(c, w),
        }
    }
}

/// True for the four frequencies equal to their own conjugate.
pub fn is_self_conjugate(r: usize, c: usize, h: usize, w: usize) -> bool {
    (r == 0 || r == h / 2) && (c == 0 || c == w / 2)
}

/// The slot holding the other half of the same frequency, if any.
pub fn partner(r: usize, c: usize, h: usize, w: usize) -> Option<(usize, usize)> {
    if is_self_conjugate(r, c, h, w) {
        None
    } else if c == 0 || c == w / 2 {
        Some((mirror(r, h), c))
    } else {
        Some((r, mirror(c, w)))
    }
}

/// Multiplicity of a slot in the full spectrum: 1 for self-conjugate
/// frequencies, 2 for slots whose frequency also appears mirrored.
pub fn slot_weight(r: usize, c: usize, h: usize, w: usize) -> f64 {
    if is_self_conjugate(r, c, h, w) {
        1.0
    } else {
        2.0
    }
}

struct Plans {
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

type PlanCache = (FftPlanner<f64>, HashMap<(usize, usize), Arc<Plans>>);

thread_local! {
    static PLANS: RefCell<PlanCache> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plans(h: usize, w: usize) -> Arc<Plans> {
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry((h, w))
            .or_insert_with(|| {
                Arc::new(Plans {
                    row_fwd: planner.plan_fft_forward(w),
                    row_inv: planner.plan_fft_inverse(w),
                    col_fwd: planner.plan_fft_forward(h),
                    col_inv: planner.plan_fft_inverse(h),
                })
            })
            .clone()
    })
}

/// Unnormalized 2-D FFT of a row-major `h x w` buffer, in place.
fn fft2(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let p = plans(h, w);
    let (row, col) = if inverse {
        (&p.row_inv, &p.col_inv)
    } else {
        (&p.row_fwd, &p.col_fwd)
    };
    row.process(buf);
    let mut column = vec![Complex64::default(); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = buf[r * w + c];
        }
        col.process(&mut column);
        for r in 0..h {
            buf[r * w + c] = column[r];
        }
    }
}

fn pack_plane(spectrum: &[Complex64], h: usize, w: usize, out: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = match slot_role(r, c, h, w) {
                SlotRole::Real { row, col } => spectrum[row * w + col].re,
                SlotRole::Sine { row, col } => -spectrum[row * w + col].im,
            };
        }
    }
}

fn unpack_plane(packed: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut spectrum = vec![Complex64::default(); h * w];
    for r in 0..h {
        for c in 0..w {
            let v = packed[r * w + c];
            match slot_role(r, c, h, w) {
                SlotRole::Real { row, col } => {
                    spectrum[row * w + col].re = v;
                    spectrum[mirror(row, h) * w + mirror(col, w)].re = v;
                }
                SlotRole::Sine { row, col } => {
                    spectrum[row * w + col].im = -v;
                    spectrum[mirror(row, h) * w + mirror(col, w)].im = v;
                }
            }
        }
    }
    spectrum
}

/// Forward transform: normalized DFT per channel, then Hermitian packing.
pub fn to_spectral(img: &PixelField) -> Result<SpectralField> {
    let shape = img.shape();
    Shape::new(shape.channels, shape.height, shape.width)?;
    if let Some(index) = img.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let (h, w) = (shape.height, shape.width);
    let scale = 1.0 / (h * w) as f64;
    let mut out = vec![0.0; shape.len()];
    let mut buf = vec![Complex64::default(); h * w];
    for (src, dst) in img.values().chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        for (b, &x) in buf.iter_mut().zip(src) {
            *b = Complex64::new(x, 0.0);
        }
        fft2(&mut buf, h, w, false);
        for b in buf.iter_mut() {
            *b *= scale;
        }
        pack_plane(&buf, h, w, dst);
    }
    Ok(SpectralField::from_raw(shape, out))
}

/// Inverse of [`to_spectral`]: unpack to the full conjugate-symmetric
/// spectrum and apply the unnormalized inverse DFT.
pub fn to_pixel(spec: &SpectralField) -> Result<PixelField> {
    let shape = spec.shape();
    Shape::new(shape.channels, shape.height, shape.width)?;
    let (h, w) = (shape.height, shape.width);
    let mut out = vec![0.0; shape.len()];
    for (src, dst) in spec.values().chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        let mut buf = unpack_plane(src, h, w);
        fft2(&mut buf, h, w, true);
        for (d, b) in dst.iter_mut().zip(&buf) {
            *d = b.re;
        }
    }
    Ok(PixelField::from_raw(shape, out))
}

/// Transpose of the linear map [`to_spectral`]. Used to pull spectral-loss
/// gradients back onto pixel-space predictions.
pub fn to_spectral_adjoint(grad: &SpectralField) -> Result<PixelField> {
    let shape = grad.shape();
    let (h, w) = (shape.height, shape.width);
    let mut scaled = grad.clone();
    for (i, v) in scaled.values_mut().iter_mut().enumerate() {
        let p = i % (h * w);
        *v /= slot_weight(p / w, p % w, h, w);
    }
    let mut px = to_pixel(&scaled)?;
    let n = (h * w) as f64;
    for v in px.values_mut() {
        *v /= n;
    }
    Ok(px)
}

pub fn to_spectral_batch(images: &[PixelField]) -> Result<Vec<SpectralField>> {
    images.par_iter().map(to_spectral).collect()
}

pub fn to_pixel_batch(fields: &[SpectralField]) -> Result<Vec<PixelField>> {
    fields.par_iter().map(to_pixel).collect()
}

/// `sum_k |X(k)|^2` over the full (unpacked) spectrum of every channel.
/// With the forward normalization, `sum x^2 = N1 * N2 * energy`.
pub fn spectral_energy(spec: &SpectralField) -> f64 {
    let s = spec.shape();
    let (h, w) = (s.height, s.width);
    spec.values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let p = i % (h * w);
            slot_weight(p / w, p % w, h, w) * v * v
        })
        .sum()
}

/// Per-slot squared magnitude `|X(k)|^2` of the frequency each slot belongs
/// to: a slot's own square plus its partner's.
pub fn slot_power(spec: &SpectralField) -> Vec<f64> {
    let s = spec.shape();
    let (h, w) = (s.height, s.width);
    let mut out = vec![0.0; s.len()];
    for c in 0..s.channels {
        let plane = spec.channel(c);
        for r in 0..h {
            for col in 0..w {
                let own = plane[r * w + col];
                let mut p = own * own;
                if let Some((pr, pc)) = partner(r, col, h, w) {
                    let v = plane[pr * w + pc];
                    p += v * v;
                }
                out[s.index(c, r, col)] = p;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialBin {
    /// Mean wavenumber radius of the components in this bin.
    pub radius: f64,
    /// Mean squared magnitude over those components.
    pub power: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub bins: Vec<RadialBin>,
}

impl RadialProfile {
    pub fn radii(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.radius).collect()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.power).collect()
    }

    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Bins per-slot powers (one value per slot, channel-major) by wavenumber
/// radius. Bins split `[0, |k|_max]` uniformly; empty bins are dropped.
/// Channels are averaged, so counts sum to `N1 * N2`.
pub fn radial_profile_from_power(shape: Shape, power: &[f64], n_bins: usize) -> Result<RadialProfile> {
    if n_bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "radial profile needs at least 2 bins, got {n_bins}"
        )));
    }
    if power.len() != shape.len() {
        return Err(Error::LengthMismatch {
            shape,
            expected: shape.len(),
            actual: power.len(),
        });
    }
    let (h, w) = (shape.height, shape.width);
    let r_max = (((h / 2).pow(2) + (w / 2).pow(2)) as f64).sqrt();
    let mut sum_r = vec![0.0; n_bins];
    let mut sum_p = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for r in 0..h {
        for c in 0..w {
            let (k1, k2) = wavenumber(r, c, h, w);
            let radius = ((k1 * k1 + k2 * k2) as f64).sqrt();
            let bin = ((radius / r_max * n_bins as f64) as usize).min(n_bins - 1);
            let mean_over_channels =
                (0..shape.channels).map(|ch| power[shape.index(ch, r, c)]).sum::<f64>() / shape.channels as f64;
            sum_r[bin] += radius;
            sum_p[bin] += mean_over_channels;
            count[bin] += 1;
        }
    }
    let bins = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| RadialBin {
            radius: sum_r[b] / count[b] as f64,
            power: sum_p[b] / count[b] as f64,
            count: count[b],
        })
        .collect();
    Ok(RadialProfile { bins })
}

pub fn radial_profile(spec: &SpectralField, n_bins: usize) -> Result<RadialProfile> {
    radial_profile_from_power(spec.shape(), &slot_power(spec), n_bins)
}
