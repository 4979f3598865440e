use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, Error, Result};
use crate::matrix::Matrix;
use crate::priors::{AnomalyKind, LabeledDataset, Provenance};

pub const LABEL_COLUMN: &str = "label";

/// Rounds to 9 significant digits and prints the shortest decimal that
/// reads back as the rounded value.
pub fn format_value(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

struct ParsedCsv {
    features: Matrix,
    labels: Option<Vec<u8>>,
    text: String,
}

fn parse_csv(path: &Path, require_label: bool) -> Result<ParsedCsv> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(DatasetError::Empty { path: p }.into());
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let csv_err = |e: csv::Error| DatasetError::Csv {
        path: p.clone(),
        message: e.to_string(),
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_col = header.iter().position(|h| h == LABEL_COLUMN);
    if require_label && label_col.is_none() {
        return Err(DatasetError::MissingLabel { path: p }.into());
    }
    let d = header.len() - usize::from(label_col.is_some());
    let mut features = Matrix::with_cols(d);
    let mut labels = Vec::new();
    let mut row_buf = Vec::with_capacity(d);
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = r + 1;
        if record.len() != header.len() {
            return Err(DatasetError::Ragged {
                path: p.clone(),
                row,
                found: record.len(),
                expected: header.len(),
            }
            .into());
        }
        row_buf.clear();
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DatasetError::NonNumeric {
                    path: p.clone(),
                    row,
                    column: c + 1,
                    value: cell.to_string(),
                })?;
            if Some(c) == label_col {
                if v != 0.0 && v != 1.0 {
                    return Err(DatasetError::BadLabel {
                        path: p.clone(),
                        row,
                        value: v,
                    }
                    .into());
                }
                labels.push(v as u8);
            } else {
                row_buf.push(v);
            }
        }
        features.push_row(&row_buf)?;
    }
    if features.rows() == 0 {
        return Err(DatasetError::Empty { path: p }.into());
    }
    Ok(ParsedCsv {
        features,
        labels: label_col.map(|_| labels),
        text,
    })
}

/// Reads a numeric CSV with a header and a mandatory `label` column.
pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let parsed = parse_csv(path, true)?;
    let provenance = Provenance {
        generator: "csv".into(),
        spec_hash: crate::sha256_hex(parsed.text.as_bytes()),
        seed: 0,
    };
    let labels = parsed.labels.expect("label column required");
    let ds = LabeledDataset::new(parsed.features, labels, None, provenance)?;
    log::info!(
        "{}: {} rows, {} features, anomaly rate {:.4}",
        path.display(),
        ds.len(),
        ds.dim(),
        ds.anomaly_rate()
    );
    Ok(ds)
}

/// Reads a numeric CSV with a header as a feature matrix. A `label` column,
/// if present, is returned separately and excluded from the features.
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<(Matrix, Option<Vec<u8>>)> {
    let parsed = parse_csv(path.as_ref(), false)?;
    Ok((parsed.features, parsed.labels))
}

/// CSV body with columns `x0..x{d-1},label`.
pub fn dataset_csv_string(ds: &LabeledDataset) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..ds.dim())
        .map(|j| format!("x{j}"))
        .chain([LABEL_COLUMN.to_string()])
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (row, &l) in ds.features.iter_rows().zip(&ds.labels) {
        let cells: Vec<String> = row.iter().map(|&v| format_value(v)).chain([l.to_string()]).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_dataset_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_csv_string(ds)).map_err(|e| Error::io(path, e))
}

/// Sidecar describing a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub spec_hash: String,
    pub kind: Option<AnomalyKind>,
    pub seed: u64,
    pub samples: usize,
    pub features: usize,
    pub anomalies: usize,
    pub anomaly_percent: f64,
    pub config_hash: String,
}

impl DatasetMeta {
    pub fn of(ds: &LabeledDataset, config_hash: &str) -> Self {
        Self {
            generator: ds.provenance.generator.clone(),
            spec_hash: ds.provenance.spec_hash.clone(),
            kind: ds.anomaly_kind,
            seed: ds.provenance.seed,
            samples: ds.len(),
            features: ds.dim(),
            anomalies: ds.anomaly_count(),
            anomaly_percent: 100.0 * ds.anomaly_rate(),
            config_hash: config_hash.to_string(),
        }
    }
}
