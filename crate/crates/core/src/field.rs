//! Channel-major real fields on an even `height x width` grid.
//!
//! Both pixel images and packed spectra use the same layout: value
//! `(c, r, col)` lives at `(c * height + r) * width + col`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 3]", try_from = "[usize; 3]")]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::NoChannels { channels });
        }
        if height == 0 || width == 0 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
            return Err(Error::OddDimension { height, width });
        }
        if channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .is_none()
        {
            return Err(Error::InvalidParameter(format!(
                "{channels}x{height}x{width} image is too large"
            )));
        }
        Ok(Shape {
            channels,
            height,
            width,
        })
    }

    /// Components per channel (`K`).
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.height + r) * self.width + col
    }

    pub(crate) fn expect(&self, actual: Shape) -> Result<()> {
        if *self == actual {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: *self,
                actual,
            })
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

impl From<Shape> for [usize; 3] {
    fn from(s: Shape) -> Self {
        [s.channels, s.height, s.width]
    }
}

impl TryFrom<[usize; 3]> for Shape {
    type Error = Error;

    fn try_from(v: [usize; 3]) -> Result<Self> {
        Shape::new(v[0], v[1], v[2])
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_len(shape: Shape, values: &[f64]) -> Result<()> {
    if values.len() != shape.len() {
        return Err(Error::LengthMismatch {
            shape,
            expected: shape.len(),
            actual: values.len(),
        });
    }
    Ok(())
}

macro_rules! real_field {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            shape: Shape,
            values: Vec<f64>,
        }

        impl $name {
            /// Wraps `values`, rejecting wrong lengths and non-finite entries.
            pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
                check_len(shape, &values)?;
                check_finite(&values)?;
                Ok(Self { shape, values })
            }

            pub fn zeros(shape: Shape) -> Self {
                Self {
                    shape,
                    values: vec![0.0; shape.len()],
                }
            }

            pub fn filled(shape: Shape, value: f64) -> Self {
                Self {
                    shape,
                    values: vec![value; shape.len()],
                }
            }

            pub(crate) fn from_raw(shape: Shape, values: Vec<f64>) -> Self {
                debug_assert_eq!(values.len(), shape.len());
                Self { shape, values }
            }

            pub fn shape(&self) -> Shape {
                self.shape
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }

            pub fn channel(&self, c: usize) -> &[f64] {
                let p = self.shape.plane();
                &self.values[c * p..(c + 1) * p]
            }

            pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
                self.values[self.shape.index(c, r, col)]
            }

            pub fn is_finite(&self) -> bool {
                self.values.iter().all(|v| v.is_finite())
            }

            /// Largest absolute component-wise difference.
            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                self.values
                    .iter()
                    .zip(&other.values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            }

            /// Plain Euclidean distance over all components.
            pub fn l2_distance(&self, other: &Self) -> f64 {
                self.values
                    .iter()
                    .zip(&other.values)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    };
}

real_field!(
    /// Real image values, `x_t` in pixel space.
    PixelField
);

real_field!(
    /// Hermitian-packed Fourier coefficients with the same shape as the image
    /// they came from. See [`crate::spectral`] for the slot layout.
    SpectralField
);
