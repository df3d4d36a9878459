//! Diffusion in the real-packed Fourier domain with class-statistics noise.
//!
//! Images are mapped to a same-sized real spectrum ([`spectral`]), noised
//! toward `N(mu, Sigma)` fitted per class ([`stats`], [`diffusion`]) and
//! denoised by a pixel-space network trained with a variance-weighted
//! spectral loss ([`training`]). [`verify`] holds independent numerical
//! oracles for the distributional identities.

// `!(x > 0.0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod field;
pub mod io;
pub mod rng;
pub mod schedule;
pub mod spectral;
pub mod stats;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use field::{PixelField, Shape, SpectralField};
