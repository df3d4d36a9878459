//! Denoiser contract, frequency-weighted loss and the training loop.

mod checkpoint;
mod loss;
mod network;
mod train;

pub use checkpoint::{loss_history_csv, Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use loss::{weighted_loss, weighted_loss_grad, DEFAULT_VARIANCE_FLOOR};
pub use network::{Activation, Architecture, BuiltinDenoiser, OutputSkip, TIME_FREQS};
pub use train::{
    gradient_check, train_loop, train_step, train_step_ddpm, Objective, Optimizer, OptimizerKind, StatsScope,
    TrainConfig, TrainOutcome, TrainingSet,
};

use crate::error::Result;
use crate::field::PixelField;

/// Pixel-space network predicting the clean image from `(x_t, t)`.
///
/// Implementations must return a field of the input's shape and be
/// deterministic in `(x, t, steps, parameters)`.
pub trait Denoiser: Send + Sync {
    fn predict(&self, x: &PixelField, t: usize, steps: usize) -> PixelField;
}

/// Gradient access for denoisers that can be trained.
pub trait Trainable: Denoiser {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Runs the forward pass, hands the prediction to `head` (which returns
    /// the loss and `d loss / d prediction`), and backpropagates to the
    /// parameters. Returns the loss and the parameter gradient.
    fn loss_and_grad(
        &self,
        x: &PixelField,
        t: usize,
        steps: usize,
        head: &mut dyn FnMut(&PixelField) -> Result<(f64, PixelField)>,
    ) -> Result<(f64, Vec<f64>)>;
}

/// Adapts a closure to the [`Denoiser`] contract.
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&PixelField, usize, usize) -> PixelField + Send + Sync,
{
    fn predict(&self, x: &PixelField, t: usize, steps: usize) -> PixelField {
        (self.0)(x, t, steps)
    }
}
