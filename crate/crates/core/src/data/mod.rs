//! Datasets and on-disk formats.

mod dataset;
mod persist;

pub use dataset::{generate, load_csv, DatasetKind, DatasetSpec, LabeledDataset, Standardizer};
pub use persist::{
    load_checkpoint, load_config, load_metrics, read_json, save_checkpoint, save_config,
    save_metrics, write_json, Checkpoint, SCHEMA_VERSION,
};
