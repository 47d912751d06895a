//! CSV datasets: one row per sample, a label column, numeric features.

use std::path::Path;

use vflkit_core::data::VerticalDataset;
use vflkit_core::Tensor;

use crate::error::{AppError, AppResult, Context};

/// Reads `path`, splitting the non-label columns into parties of the given
/// widths. Labels must be non-negative integers.
pub fn read_csv(path: &Path, label_column: &str, widths: &[usize], test_fraction: f64, seed: u64) -> AppResult<VerticalDataset> {
    let origin = path.display().to_string();
    let file = std::fs::File::open(path).map_err(AppError::io(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_err = |line: usize, detail: String| AppError::Parse {
        path: origin.clone(),
        line,
        detail,
    };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let label_at = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_err(1, format!("no `{label_column}` column")))?;
    let n_features = headers.len() - 1;
    if widths.iter().sum::<usize>() != n_features {
        return Err(AppError::Config(format!(
            "dataset.dims sum to {} but {origin} has {n_features} feature columns",
            widths.iter().sum::<usize>()
        )));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != headers.len() {
            return Err(parse_err(line, format!("{} fields, header has {}", row.len(), headers.len())));
        }
        for (c, field) in row.iter().enumerate() {
            let field = field.trim();
            if c == label_at {
                let y = field
                    .parse::<usize>()
                    .map_err(|_| parse_err(line, format!("column `{}`: label `{field}` is not a class index", &headers[c])))?;
                labels.push(y);
            } else {
                let v = field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("column `{}`: `{field}` is not a finite number", &headers[c])))?;
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let features = Tensor::matrix(labels.len(), n_features, data).context(&origin)?;
    let mut cumulative = Vec::with_capacity(widths.len());
    let mut acc = 0;
    for w in widths {
        acc += w;
        cumulative.push(acc);
    }
    VerticalDataset::from_table(&features, labels, &cumulative, test_fraction, seed).context(&origin)
}

/// Writes the joint features (parties in order) and labels with a header.
pub fn write_csv(path: &Path, ds: &VerticalDataset) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))?;
    let mut header = Vec::new();
    for (k, d) in ds.party_dims().iter().enumerate() {
        header.extend((0..*d).map(|j| format!("p{}_{j}", k + 1)));
    }
    header.push("label".into());
    let io = |e: csv::Error| AppError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    let joint = ds.joint_features();
    for r in 0..ds.rows() {
        let mut rec: Vec<String> = joint.row(r).iter().map(|v| format!("{v:e}")).collect();
        rec.push(ds.labels()[r].to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(AppError::io(path))
}
