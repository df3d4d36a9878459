//! Dataset ingestion and file formats.

pub mod config;
pub mod dataset;
pub mod idx;
pub mod pnm;

pub use config::{DataConfig, DataSource, RunConfig, ScheduleSpec};
pub use dataset::{load_idx, load_image_dir, save_pnm, Dataset, DirLayout, SourceKind};
