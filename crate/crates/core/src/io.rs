//! Dataset CSV I/O and small JSON helpers. The CSV dialect is plain: one
//! observation per row, comma separators, decimal-point floats, optional
//! header row of column names. Parse errors carry 1-based row/column
//! locations.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sem::Dataset;

/// Parses a CSV file of observations. With `center`, column means are
/// subtracted and the dataset is flagged as centered.
pub fn load_csv(path: &Path, has_header: bool, center: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, has_header, center)
}

pub(crate) fn parse_csv(text: &str, has_header: bool, center: bool) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    let mut column_names = None;
    if has_header {
        let (_, header) = lines.next().ok_or(Error::Parse {
            row: 1,
            col: 1,
            msg: "empty file".into(),
        })?;
        column_names = Some(
            header
                .split(',')
                .map(|s| s.trim().to_string())
                .collect::<Vec<_>>(),
        );
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (row_no, line) in lines {
        let mut row = Vec::new();
        for (col_idx, cell) in line.split(',').enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: row_no,
                col: col_idx + 1,
                msg: format!("`{}` is not a number", cell.trim()),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: row_no,
                    col: col_idx + 1,
                    msg: format!("non-finite value `{}`", cell.trim()),
                });
            }
            row.push(value);
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::Parse {
                    row: row_no,
                    col: row.len(),
                    msg: format!("expected {w} fields, found {}", row.len()),
                });
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: if has_header { 2 } else { 1 },
            col: 1,
            msg: "no data rows".into(),
        });
    }

    let mut data = Dataset::from_rows(&rows)?;
    if let Some(names) = column_names {
        if names.len() != data.p() {
            return Err(Error::Parse {
                row: 1,
                col: names.len(),
                msg: format!("header has {} names for {} columns", names.len(), data.p()),
            });
        }
        data = data.with_names(names)?;
    }
    if center {
        data.center();
    }
    Ok(data)
}

/// Writes a dataset as CSV; emits a header row when column names are present.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, render_csv(data))?;
    Ok(())
}

/// Renders a dataset in the same dialect [`load_csv`] reads.
pub fn render_csv(data: &Dataset) -> String {
    let mut out = String::new();
    if let Some(names) = data.column_names() {
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for i in 0..data.n() {
        let row: Vec<String> = (0..data.p())
            .map(|j| format!("{}", data.values()[(i, j)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
