//! Dataset ingestion, protocol mixing, configuration and checkpoint files,
//! and CSV outputs.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod idx;
pub mod mix;
pub mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint, SavedRun, FORMAT_VERSION};
pub use config::RunConfig;
pub use idx::{load_idx, load_idx_dir, write_idx, LabeledImageSet, Split};
pub use mix::{mix_dataset, GroundTruth, MixSpec, MixedDataset};
