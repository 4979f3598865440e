use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{load_dataset_csv, write_dataset_csv, DatasetMeta};
use crate::error::{Error, Result};
use crate::eval::BenchDataset;
use crate::priors::LabeledDataset;

/// Writes `<name>.csv` and a `<name>.json` sidecar per dataset.
pub fn write_corpus(
    datasets: &[(String, LabeledDataset)],
    dir: impl AsRef<Path>,
    config_hash: &str,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(datasets.len());
    for (name, ds) in datasets {
        let csv_path = dir.join(format!("{name}.csv"));
        write_dataset_csv(ds, &csv_path)?;
        let meta_path = dir.join(format!("{name}.json"));
        let meta = serde_json::to_vec_pretty(&DatasetMeta::of(ds, config_hash))?;
        fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
        written.push(csv_path);
    }
    Ok(written)
}

/// Loads every `*.csv` in `dir`, sorted by file name; the stem becomes the
/// dataset name.
pub fn load_dataset_dir(dir: impl AsRef<Path>) -> Result<Vec<BenchDataset>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("{}: no CSV datasets", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            Ok(BenchDataset {
                name: p.file_stem().expect("csv has a stem").to_string_lossy().into_owned(),
                data: load_dataset_csv(p)?,
            })
        })
        .collect()
}
