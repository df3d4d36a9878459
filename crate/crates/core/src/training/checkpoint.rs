use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, BuiltinDenoiser};
use super::train::{Optimizer, OptimizerKind, TrainConfig};
use super::Trainable;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "specdiff-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub architecture: Architecture,
    pub config: TrainConfig,
    /// Number of completed iterations.
    pub iteration: usize,
    pub param_count: usize,
    pub optimizer: OptimizerKind,
    /// Updates applied by the optimizer so far.
    pub optimizer_step: u64,
}

/// Serialized training state: one line of JSON header, a newline, then
/// `param_count` little-endian `f64` parameters, followed for Adam by the
/// first and then second moment vectors of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    /// Concatenated Adam moments, empty for SGD.
    pub moments: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &BuiltinDenoiser, opt: &Optimizer, config: TrainConfig, iteration: usize) -> Self {
        let params = model.params().to_vec();
        let mut moments = opt.m.clone();
        moments.extend_from_slice(&opt.v);
        Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.to_string(),
                architecture: model.architecture(),
                config,
                iteration,
                param_count: params.len(),
                optimizer: opt.kind,
                optimizer_step: opt.step,
            },
            params,
            moments,
        }
    }

    pub fn model(&self) -> Result<BuiltinDenoiser> {
        BuiltinDenoiser::from_params(self.header.architecture, self.params.clone())
    }

    /// Optimizer state at the time of saving, stepping with `learning_rate`.
    pub fn optimizer(&self, learning_rate: f64) -> Result<Optimizer> {
        let n = self.params.len();
        let mut opt = Optimizer::new(self.header.optimizer, learning_rate, n);
        if self.header.optimizer == OptimizerKind::Adam {
            if self.moments.len() != 2 * n {
                return Err(Error::malformed("checkpoint", "Adam moments do not match parameters"));
            }
            opt.m.copy_from_slice(&self.moments[..n]);
            opt.v.copy_from_slice(&self.moments[n..]);
        }
        opt.step = self.header.optimizer_step;
        Ok(opt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        out.reserve((self.params.len() + self.moments.len()) * 8);
        for p in self.params.iter().chain(&self.moments) {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::malformed("checkpoint", "missing header terminator"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::UnsupportedFormat(format!(
                "checkpoint format {:?}",
                header.format
            )));
        }
        header.architecture.validate()?;
        if header.param_count != header.architecture.param_count() {
            return Err(Error::malformed(
                "checkpoint",
                format!(
                    "header declares {} parameters, architecture needs {}",
                    header.param_count,
                    header.architecture.param_count()
                ),
            ));
        }
        let body = &bytes[split + 1..];
        let blocks = if header.optimizer == OptimizerKind::Adam { 3 } else { 1 };
        let expected = header
            .param_count
            .checked_mul(8 * blocks)
            .ok_or_else(|| Error::malformed("checkpoint", "parameter count overflows"))?;
        if body.len() != expected {
            return Err(Error::Truncated {
                what: "checkpoint parameters",
                expected,
                actual: body.len(),
            });
        }
        let mut params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        if blocks == 3 && params[2 * header.param_count..].iter().any(|v| *v < 0.0) {
            return Err(Error::malformed("checkpoint", "negative second moment"));
        }
        let moments = params.split_off(header.param_count);
        Ok(Checkpoint {
            header,
            params,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// `iteration,loss` CSV with a header row.
pub fn loss_history_csv(history: &[(usize, f64)]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (it, loss) in history {
        out.push_str(&format!("{it},{loss:e}\n"));
    }
    out
}
