//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_diffusion::io::{load_idx, Dataset};
use spectral_diffusion::{PixelField, Shape};

fn signed(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Cosine and sine sums `(R, S)` of one plane at wavenumber `(k1, k2)`,
/// straight from the definition.
pub fn dft_sums(plane: &[f64], h: usize, w: usize, k1: i64, k2: i64) -> (f64, f64) {
    let (mut re, mut si) = (0.0, 0.0);
    for n1 in 0..h {
        for n2 in 0..w {
            let phase = 2.0 * PI * (n1 as f64 * k1 as f64 / h as f64 + n2 as f64 * k2 as f64 / w as f64);
            re += plane[n1 * w + n2] * phase.cos();
            si += plane[n1 * w + n2] * phase.sin();
        }
    }
    let n = (h * w) as f64;
    (re / n, si / n)
}

/// O(N^4) packed transform of one plane. Columns `0` and `N2/2` keep the
/// cosine sum for `k1 >= 0` and the sine sum of `-k1` below; elsewhere
/// positive `k2` keeps the cosine sum and negative `k2` the sine sum of
/// `(k1, -k2)`.
pub fn direct_packed(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (k1, k2) = (signed(r, h), signed(c, w));
            out[r * w + c] = if c == 0 || c == w / 2 {
                if k1 >= 0 {
                    dft_sums(plane, h, w, k1, k2).0
                } else {
                    dft_sums(plane, h, w, -k1, k2).1
                }
            } else if k2 > 0 {
                dft_sums(plane, h, w, k1, k2).0
            } else {
                dft_sums(plane, h, w, k1, -k2).1
            };
        }
    }
    out
}

/// `|X|^2` multiplicity of slot `(r, c)`: 1 on the four real frequencies.
pub fn multiplicity(r: usize, c: usize, h: usize, w: usize) -> f64 {
    if (r == 0 || r == h / 2) && (c == 0 || c == w / 2) {
        1.0
    } else {
        2.0
    }
}

pub fn uniform_field(shape: Shape, seed: u64) -> PixelField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PixelField::new(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// The shipped 5000-image MNIST subset, padded to 32x32.
pub fn mnist() -> Dataset {
    let dir = mnist_dir();
    load_idx(
        &dir.join("mnist5k-images-idx3-ubyte.gz"),
        Some(&dir.join("mnist5k-labels-idx1-ubyte.gz")),
        Some(32),
    )
    .expect("MNIST subset present under data/mnist")
}

/// Centred moving average of width `2 * half + 1`, shrunk at the ends.
pub fn smooth(values: &[f64], half: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}
