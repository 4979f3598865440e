//! Dataset files, generated-data sidecars and run configuration.

mod config;
mod corpus;
mod dataset;

pub use config::{RunConfig, Schedule};
pub use corpus::{load_dataset_dir, write_corpus};
pub use dataset::{
    dataset_csv_string, format_value, load_dataset_csv, load_features_csv, write_dataset_csv, DatasetMeta, LABEL_COLUMN,
};
