use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::RawDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
];

fn is_timestamp(cell: &str) -> bool {
    let cell = cell.trim();
    DATETIME_FORMATS
        .iter()
        .any(|f| NaiveDateTime::parse_from_str(cell, f).is_ok())
        || NaiveDate::parse_from_str(cell, "%Y-%m-%d").is_ok()
        || DateTime::parse_from_rfc3339(cell).is_ok()
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a numeric CSV into a T×C dataset.
///
/// A first row containing non-numeric cells is treated as a header. A first
/// column of timestamps is dropped. Row numbers in errors are 1-based file
/// lines.
pub fn load_csv(path: &Path) -> Result<RawDataset> {
    let load_err = |row: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(0, e.to_string()))?;

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            load_err(row, e.to_string())
        })?;
        let line = rec.position().map_or(records.len() + 1, |p| p.line() as usize);
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push((line, rec.iter().map(str::to_string).collect::<Vec<_>>()));
    }
    if records.is_empty() {
        return Err(load_err(0, "file has no rows".into()));
    }

    let width = records[0].1.len();
    for (line, cells) in &records {
        if cells.len() != width {
            return Err(load_err(
                *line,
                format!("expected {width} columns, found {}", cells.len()),
            ));
        }
    }

    let first = &records[0].1;
    let first_is_data_or_stamped =
        first.iter().enumerate().all(|(j, c)| parse_number(c).is_some() || (j == 0 && is_timestamp(c)));
    let header = if first_is_data_or_stamped {
        None
    } else {
        Some(records.remove(0).1)
    };
    if records.is_empty() {
        return Err(load_err(0, "file has a header but no data rows".into()));
    }

    let drop_first = {
        let cell = &records[0].1[0];
        parse_number(cell).is_none() && is_timestamp(cell)
    };
    if drop_first {
        log::info!("{}: dropping timestamp column", path.display());
    }
    let skip = usize::from(drop_first);
    let cols = width - skip;
    if cols == 0 {
        return Err(load_err(records[0].0, "no value columns".into()));
    }

    let mut data = Vec::with_capacity(records.len() * cols);
    for (line, cells) in &records {
        for (j, cell) in cells.iter().enumerate().skip(skip) {
            let v = parse_number(cell).ok_or_else(|| {
                load_err(*line, format!("cannot parse `{cell}` as a finite number (column {})", j + 1))
            })?;
            data.push(v);
        }
    }
    let values = Matrix::from_vec(records.len(), cols, data)?;

    let mut ds = RawDataset::new(
        path.file_stem()
            .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned()),
        values,
    );
    if let Some(h) = header {
        ds.channel_names = h.into_iter().skip(skip).collect();
    }
    Ok(ds)
}
