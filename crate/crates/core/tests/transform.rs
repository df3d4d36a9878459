mod common;

use proptest::prelude::*;
use spectral_diffusion::spectral::{to_pixel, to_spectral, to_spectral_adjoint};
use spectral_diffusion::{PixelField, Shape, SpectralField};

use common::{direct_packed, multiplicity, uniform_field};

fn packed_matches_direct(h: usize, w: usize, seed: u64) {
    let img = uniform_field(Shape::new(2, h, w).unwrap(), seed);
    let spec = to_spectral(&img).unwrap();
    for c in 0..2 {
        let want = direct_packed(img.channel(c), h, w);
        for (i, (a, b)) in spec.channel(c).iter().zip(&want).enumerate() {
            assert!((a - b).abs() < 1e-10, "{h}x{w} channel {c} slot {i}: {a} vs {b}");
        }
    }
}

#[test]
fn packing_equals_direct_dft_4x4() {
    packed_matches_direct(4, 4, 1);
}

#[test]
fn packing_equals_direct_dft_6x8() {
    packed_matches_direct(6, 8, 2);
    packed_matches_direct(8, 6, 3);
}

#[test]
fn packing_is_bijective_on_a_basis() {
    // every pixel basis vector maps to a distinct spectrum and back
    let shape = Shape::new(1, 4, 6).unwrap();
    let mut images = Vec::new();
    for i in 0..shape.len() {
        let mut v = vec![0.0; shape.len()];
        v[i] = 1.0;
        let spec = to_spectral(&PixelField::new(shape, v.clone()).unwrap()).unwrap();
        let back = to_pixel(&spec).unwrap();
        assert!(back.values().iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12));
        images.push(spec.into_values());
    }
    // the packed images of a basis are linearly independent: Gram matrix
    // is diagonal with the Parseval weights
    for i in 0..images.len() {
        for j in 0..images.len() {
            let dot: f64 = (0..shape.len())
                .map(|k| multiplicity(k / 6, k % 6, 4, 6) * images[i][k] * images[j][k])
                .sum();
            let want = if i == j { 1.0 / shape.len() as f64 } else { 0.0 };
            assert!((dot - want).abs() < 1e-12, "{i},{j}: {dot}");
        }
    }
}

#[test]
fn round_trip_32x32() {
    for seed in 0..5 {
        let img = uniform_field(Shape::new(3, 32, 32).unwrap(), seed);
        let back = to_pixel(&to_spectral(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-9);
    }
}

#[test]
fn adjoint_is_the_transpose() {
    let shape = Shape::new(1, 6, 4).unwrap();
    let x = uniform_field(shape, 7);
    let g = SpectralField::new(shape, uniform_field(shape, 8).into_values()).unwrap();
    let lhs: f64 = to_spectral(&x)
        .unwrap()
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| a * b)
        .sum();
    let rhs: f64 = x
        .values()
        .iter()
        .zip(to_spectral_adjoint(&g).unwrap().values())
        .map(|(a, b)| a * b)
        .sum();
    assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=3, 1usize..=8, 1usize..=8).prop_map(|(c, h, w)| (c, 2 * h, 2 * w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval((c, h, w) in dims(), seed in any::<u64>()) {
        let img = uniform_field(Shape::new(c, h, w).unwrap(), seed);
        let spec = to_spectral(&img).unwrap();
        let pixel: f64 = img.values().iter().map(|v| v * v).sum();
        let mut weighted = 0.0;
        for ch in 0..c {
            for (i, v) in spec.channel(ch).iter().enumerate() {
                weighted += multiplicity(i / w, i % w, h, w) * v * v;
            }
        }
        let spectral = (h * w) as f64 * weighted;
        prop_assert!((pixel - spectral).abs() <= 1e-9 * pixel.max(1e-300));
    }

    #[test]
    fn linearity((c, h, w) in dims(), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let shape = Shape::new(c, h, w).unwrap();
        let x = uniform_field(shape, seed);
        let y = uniform_field(shape, seed.wrapping_add(1));
        let combo = PixelField::new(
            shape,
            x.values().iter().zip(y.values()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        let (sx, sy, sc) = (to_spectral(&x).unwrap(), to_spectral(&y).unwrap(), to_spectral(&combo).unwrap());
        for i in 0..shape.len() {
            let want = a * sx.values()[i] + b * sy.values()[i];
            prop_assert!((sc.values()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_any_even_shape((c, h, w) in dims(), seed in any::<u64>()) {
        let img = uniform_field(Shape::new(c, h, w).unwrap(), seed);
        let back = to_pixel(&to_spectral(&img).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&img) < 1e-12);
    }
}
