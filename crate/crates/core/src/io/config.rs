use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{load_idx, load_image_dir, Dataset, DirLayout};
use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, DEFAULT_TERMINAL_EPS};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default)]
        pad_to: Option<usize>,
    },
    Dir {
        path: PathBuf,
        #[serde(default)]
        layout: DirLayout,
    },
}

impl DataSource {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            DataSource::Idx { images, labels, .. } => {
                let mut v = vec![images];
                v.extend(labels.as_mut());
                v
            }
            DataSource::Dir { path, .. } => vec![path],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Keep only images with this label.
    #[serde(default)]
    pub label: Option<u32>,
    /// Keep at most this many images (after label filtering).
    #[serde(default)]
    pub limit: Option<usize>,
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset> {
        let mut data = match &self.source {
            DataSource::Idx { images, labels, pad_to } => load_idx(images, labels.as_deref(), *pad_to)?,
            DataSource::Dir { path, layout } => load_image_dir(path, *layout)?,
        };
        if let Some(l) = self.label {
            data = data.filter_label(l)?;
        }
        if let Some(n) = self.limit {
            data = data.truncate(n);
        }
        if data.is_empty() {
            return Err(Error::Empty {
                what: "dataset after filtering",
            });
        }
        Ok(data)
    }
}

fn default_eps() -> f64 {
    DEFAULT_TERMINAL_EPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Cosine {
        steps: usize,
        #[serde(default = "default_eps")]
        terminal_eps: f64,
    },
    Constant {
        steps: usize,
        alpha: f64,
    },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match *self {
            ScheduleSpec::Cosine { steps, terminal_eps } => NoiseSchedule::cosine(steps, terminal_eps),
            ScheduleSpec::Constant { steps, alpha } => NoiseSchedule::constant(steps, alpha),
        }
    }

    pub fn steps(&self) -> usize {
        match *self {
            ScheduleSpec::Cosine { steps, .. } | ScheduleSpec::Constant { steps, .. } => steps,
        }
    }
}

fn default_samples() -> usize {
    64
}

/// Complete description of a training run. Relative paths are taken
/// relative to the directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub schedule: ScheduleSpec,
    pub train: TrainConfig,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Overrides `train.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.train.validate()?;
        cfg.schedule.build()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads `path`, makes relative paths absolute against its directory,
    /// so the config can be written back out and reused from anywhere,
    /// and checks that the input files exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let base = std::path::absolute(if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            base
        })
        .map_err(|e| Error::io(path, e))?;
        cfg.resolve_paths(&base);
        for p in cfg.data.source.paths_mut() {
            if !p.exists() {
                return Err(Error::io(
                    p.clone(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
                ));
            }
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in self.data.source.paths_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Folds `seed` (or the config's own seed) into the training section so
    /// the written config is self-contained.
    pub fn resolve_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.train.seed = s;
        }
    }
}
